"""``compactfit`` command line: bench, replay, analyze, gen-trace."""

import argparse
import contextlib
import sys

from . import layout
from .automaton import AutomatonConfig
from .bench import DEFAULT_BATCH, kappa_sweep, run_bench, run_replay, write_reports
from .errors import CompactFitError, ConfigError, ResourceError, TraceError
from .heap import AddressingMode, HeapConfig
from .markov import (DEFAULT_STATE_BUDGET, Encoding, MutatorWord, TargetPredicate, count_states, sweep,
                     write_csv)
from .runtime import DeploymentMode, LockRegime
from .trace import DYNAMICS, PRESETS, format_trace, generate_trace, load_distribution, read_trace

EXIT_USAGE = 2
EXIT_INPUT = 1
EXIT_RESOURCE = 3


def _bound(text):
    """Integer >= 1 or ``inf`` (returned as None)."""
    if text.lower() in ("inf", "none", "unbounded"):
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'inf', got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1 or 'inf', got {value}")
    return value


def _int_list(text):
    """``3``, ``1,2,5`` or an inclusive range ``0:40`` (optionally ``0:40:5``)."""
    out = []
    try:
        for part in text.split(","):
            if ":" in part:
                bits = [int(b) for b in part.split(":")]
                step = bits[2] if len(bits) == 3 else 1
                out.extend(range(bits[0], bits[1] + 1, step))
            else:
                out.append(int(part))
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _bound_list(text):
    return [_bound(t) for t in text.split(",")]


def _classes(text):
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad class list {text!r}") from None


def _add_heap_flags(p):
    p.add_argument("--kappa", type=_bound, default=None, help="partial compaction bound (n or inf)")
    p.add_argument("--iota", type=_bound, default=None, help="compaction increment in bytes (n or inf)")
    p.add_argument("--page-bytes", type=int, default=layout.DEFAULT_PAGE_BYTES)
    p.add_argument("--arena-bytes", type=int, default=32 << 20)
    p.add_argument("--classes", type=_classes, default=None, help="comma separated block sizes")
    p.add_argument("--addressing", choices=[m.value for m in AddressingMode], default="abstract")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None, help="CSV output path, '-' for stdout")


def _add_concurrency_flags(p):
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--mode", choices=[m.value for m in DeploymentMode], default="global")
    p.add_argument("--locks", choices=[r.value for r in LockRegime], default="sizeclass")


def build_parser():
    parser = argparse.ArgumentParser(prog="compactfit", description="Compacting real-time allocator toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="allocate/free microbenchmark")
    _add_heap_flags(b)
    _add_concurrency_flags(b)
    b.add_argument("--ops", type=int, default=100_000)
    b.add_argument("--batch", type=int, default=DEFAULT_BATCH)
    b.add_argument("--share", type=float, default=0.0, help="fraction of objects freed by another thread")
    b.add_argument("--instances", type=int, default=None, help="heap count in instances mode")
    b.add_argument("--dist", default="espresso-like", help="preset name or distribution file")
    b.add_argument("--checksum", action="store_true", help="verify object contents before each free")
    b.add_argument("--timing", action="store_true", help="add wall-clock rates to the CSV")

    r = sub.add_parser("replay", help="replay an allocation trace")
    r.add_argument("trace")
    _add_heap_flags(r)
    r.add_argument("--kappa-sweep", type=_bound_list, default=None, help="e.g. 1,2,3,5,8,inf")
    r.add_argument("--checksum", action="store_true")
    r.add_argument("--timing", action="store_true")

    a = sub.add_parser("analyze", help="exact reachability probabilities of one size-class")
    a.add_argument("--h", type=int, required=True)
    a.add_argument("--pi", type=int, required=True)
    a.add_argument("--kappa", type=_int_list, required=True, help="list or range, e.g. 1:5")
    a.add_argument("--d", type=_int_list, default=None, help="list or range; default h")
    a.add_argument("--target", choices=[t.value for t in TargetPredicate] + ["both"], default="compaction")
    a.add_argument("--encoding", choices=[e.value for e in Encoding] + ["both"], default=None,
                   help="state encoding; default multiset for compaction, sequence otherwise")
    a.add_argument("--count-only", action="store_true", help="print state and transition counts only")
    a.add_argument("--state-budget", type=int, default=DEFAULT_STATE_BUDGET)
    a.add_argument("--csv", default="-")

    g = sub.add_parser("gen-trace", help="write a seeded synthetic trace")
    g.add_argument("--preset", default=None, choices=sorted(PRESETS))
    g.add_argument("--dist", default=None, help="distribution file (size weight per line)")
    g.add_argument("--ops", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dynamics", choices=DYNAMICS, default="steady")
    g.add_argument("--peak-live", type=int, default=None)
    g.add_argument("--max-size", type=int, default=None, help="drop sizes above this")
    g.add_argument("--out", default="-")
    return parser


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _heap_config(args):
    cfg = HeapConfig(
        arena_bytes=args.arena_bytes,
        page_bytes=args.page_bytes,
        class_block_sizes=args.classes,
        kappa=args.kappa,
        iota=args.iota,
        addressing_mode=AddressingMode(args.addressing),
    )
    return cfg.validate()


def cmd_bench(args):
    cfg = _heap_config(args)
    report = run_bench(cfg, threads=args.threads, ops=args.ops, mode=DeploymentMode(args.mode),
                       regime=LockRegime(args.locks), dist=load_distribution(args.dist), seed=args.seed,
                       batch=args.batch, share=args.share, instances=args.instances, checksum=args.checksum)
    print(report.summary(), file=sys.stderr)
    for problem in report.problems:
        print(f"problem: {problem}", file=sys.stderr)
    if args.csv is not None:
        with _output(args.csv) as out:
            write_reports([report], out, timing=args.timing)
    return 1 if report.problems else 0


def cmd_replay(args):
    cfg = _heap_config(args)
    ops = read_trace(args.trace)
    if args.kappa_sweep:
        reports = kappa_sweep(cfg, ops, args.kappa_sweep, label=args.trace)
    else:
        reports = [run_replay(cfg, ops, label=args.trace, checksum=args.checksum)]
    for r in reports:
        print(r.summary(), file=sys.stderr)
    with _output(args.csv) as out:
        write_reports(reports, out, timing=args.timing)
    return 1 if any(r.problems for r in reports) else 0


def cmd_analyze(args):
    ds = args.d if args.d is not None else [args.h]
    for d in ds:
        MutatorWord(args.h, d)
    targets = list(TargetPredicate) if args.target == "both" else [TargetPredicate(args.target)]
    if args.count_only:
        encodings = list(Encoding) if args.encoding in (None, "both") else [Encoding(args.encoding)]
        status = 0
        for kappa in args.kappa:
            cfg = AutomatonConfig(args.pi, kappa)
            for d in ds:
                for enc in encodings:
                    try:
                        c = count_states(cfg, MutatorWord(args.h, d), enc, args.state_budget)
                        print(f"h={args.h} pi={args.pi} kappa={kappa} d={d} encoding={enc.value} "
                              f"states={c.states} transitions={c.transitions}")
                    except ResourceError as exc:
                        print(f"h={args.h} pi={args.pi} kappa={kappa} d={d} encoding={enc.value} "
                              f"partial states>={exc.states_seen} transitions>={exc.transitions_seen} ({exc})")
                        status = EXIT_RESOURCE
        return status
    encoding = Encoding(args.encoding) if args.encoding not in (None, "both") else None
    rows = sweep(args.h, args.pi, args.kappa, ds, targets, encoding, args.state_budget)
    with _output(args.csv) as out:
        write_csv(rows, out)
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"kappa={r.kappa} d={r.d} {r.target}: {r.error}", file=sys.stderr)
    return EXIT_RESOURCE if failed else 0


def cmd_gen_trace(args):
    if (args.preset is None) == (args.dist is None):
        raise ConfigError("give exactly one of --preset and --dist")
    dist = load_distribution(args.preset or args.dist)
    if args.max_size is not None:
        dist = dist.limited(args.max_size)
    ops = generate_trace(dist, args.ops, args.seed, args.dynamics, args.peak_live)
    header = f"{dist.name} ops={args.ops} seed={args.seed} dynamics={args.dynamics}"
    with _output(args.out) as out:
        out.write(format_trace(ops, header))
    return 0


COMMANDS = {"bench": cmd_bench, "replay": cmd_replay, "analyze": cmd_analyze, "gen-trace": cmd_gen_trace}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        parser.error(str(exc))  # exits with status 2
    except TraceError as exc:
        print(f"compactfit: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CompactFitError as exc:
        print(f"compactfit: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
