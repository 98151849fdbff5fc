import collections
import random

import pytest

from compactfit.bench import CSV_VERSION, kappa_sweep, reports_csv, run_bench, run_replay
from compactfit.errors import ContractError, TraceError
from compactfit.heap import Heap, HeapConfig
from compactfit.runtime import DeploymentMode, LockRegime
from compactfit.trace import (PRESETS, SizeDistribution, TraceOp, format_trace, generate_trace,
                              load_distribution, parse_distribution, parse_trace)

BIG = 32 << 20


def test_parse_trace_with_comments():
    ops = parse_trace(["# header", "", "a 1 40  # first", "a 2 8", "f 1", "f 2"])
    assert ops == [TraceOp("a", 1, 40), TraceOp("a", 2, 8), TraceOp("f", 1), TraceOp("f", 2)]
    assert parse_trace(format_trace(ops, "again").splitlines()) == ops


@pytest.mark.parametrize("lines,lineno,fragment", [
    (["a 1 40", "f 2"], 2, "unknown id 2"),
    (["a 1 40", "a 1 8"], 2, "already live"),
    (["# c", "x 1"], 2, "malformed"),
    (["a one 4"], 1, "bad id"),
    (["a 1 -4"], 1, "positive"),
    (["a 1 4", "f 1", "f 1"], 3, "unknown id 1"),
])
def test_parse_trace_errors_carry_line_numbers(lines, lineno, fragment):
    with pytest.raises(TraceError) as info:
        parse_trace(lines)
    assert info.value.lineno == lineno
    assert fragment in str(info.value)
    assert f"line {lineno}" in str(info.value)


def test_distribution_files():
    dist = parse_distribution(["# sizes", "16 3", "64 1.5"])
    assert dist.entries == ((16, 3.0), (64, 1.5))
    for bad in (["16"], ["16 0"], ["x 1"], [], ["16 y"]):
        with pytest.raises(TraceError):
            parse_distribution(bad)
    with pytest.raises(TraceError):
        load_distribution("/nonexistent/dist.txt")
    with pytest.raises(TraceError):
        SizeDistribution(())


def test_emacs_preset_proportions():
    sizes = PRESETS["emacs-like"].sample(random.Random(11), 200_000)
    counts = collections.Counter(sizes)
    for size, share in ((40, 0.51), (648, 0.15), (104, 0.11)):
        assert abs(counts[size] / len(sizes) - share) <= 0.01


def test_hummingbird_preset_and_clamp():
    dist = PRESETS["hummingbird-like"]
    counts = collections.Counter(dist.sample(random.Random(5), 200_000))
    assert abs(counts[8] / 200_000 - 0.25) <= 0.01
    assert abs(counts[32] / 200_000 - 0.23) <= 0.01
    assert max(dist.sizes()) == 16384 and min(dist.sizes()) >= 8
    heap = Heap(HeapConfig())
    kept = dist.limited(heap.largest_usable)
    assert 16384 not in kept.sizes() and 8192 in kept.sizes()
    with pytest.raises(TraceError):
        dist.limited(4)


@pytest.mark.parametrize("dynamics", ["ramp", "steady", "sawtooth"])
def test_generated_traces_are_reproducible_and_valid(dynamics):
    a = generate_trace(PRESETS["espresso-like"], 10_000, 1, dynamics)
    b = generate_trace(PRESETS["espresso-like"], 10_000, 1, dynamics)
    assert a == b
    assert parse_trace(format_trace(a).splitlines()) == a
    assert a != generate_trace(PRESETS["espresso-like"], 10_000, 2, dynamics)


def test_sawtooth_live_set_rises_and_falls():
    ops = generate_trace(PRESETS["emacs-like"], 40_000, 3, "sawtooth", peak_live=2000)
    live, curve = 0, []
    for op in ops:
        live += 1 if op.kind == "a" else -1
        curve.append(live)
    q = len(ops) // 4
    assert max(curve[:q]) > 1600
    assert min(curve[q:2 * q]) < 900


def test_generator_rejects_bad_arguments():
    with pytest.raises(TraceError):
        generate_trace(PRESETS["emacs-like"], 10, 0, "zigzag")
    with pytest.raises(TraceError):
        generate_trace(PRESETS["emacs-like"], -1, 0)


def test_replay_of_tiny_trace_ends_empty():
    report = run_replay(HeapConfig(), parse_trace(["a 1 40", "f 1"]))
    assert report.live_objects == 0 and report.pages_used == 0
    assert report.allocs == report.deallocs == 1
    assert report.problems == []


def test_replay_rejects_oversized_objects():
    with pytest.raises(TraceError):
        run_replay(HeapConfig(page_bytes=4096), [TraceOp("a", 1, 5000)])


def test_replay_with_checksums_and_compaction():
    ops = generate_trace(PRESETS["emacs-like"], 20_000, 4, "sawtooth", peak_live=1500)
    report = run_replay(HeapConfig(kappa=1, iota=64), ops, checksum=True)
    assert report.problems == []
    assert report.compactions > 0
    assert report.max_step_bytes <= 64
    assert report.kappa_violations == 0


def test_kappa_sweep_orders_fragmentation():
    ops = generate_trace(PRESETS["emacs-like"], 20_000, 1, "sawtooth", peak_live=1500)
    reports = kappa_sweep(HeapConfig(), ops, [1, 2, 5, None])
    frag = [r.fragmentation for r in reports]
    assert frag == sorted(frag)
    assert all(r.problems == [] for r in reports)


def test_single_thread_bench_is_deterministic():
    cfg = HeapConfig(kappa=2, iota=64)
    a = reports_csv([run_bench(cfg, ops=20_000, seed=7)])
    b = reports_csv([run_bench(cfg, ops=20_000, seed=7)])
    assert a == b
    assert a.startswith(CSV_VERSION + "\n")
    assert "seconds" not in a
    assert "ops_per_sec" in reports_csv([run_bench(cfg, ops=1000, seed=7)], timing=True)


def test_bench_counters_reconcile():
    report = run_bench(HeapConfig(kappa=1), ops=30_000, seed=2, checksum=True, batch=500)
    assert report.problems == []
    assert report.allocs - report.deallocs == report.live_objects
    assert report.ops == 30_000
    assert report.compactions > 0


@pytest.mark.parametrize("iota,bound", [(64, 64), (None, 16128)])
def test_bench_step_bytes_follow_iota(iota, bound):
    report = run_bench(HeapConfig(arena_bytes=BIG, kappa=1, iota=iota), ops=40_000, seed=3)
    assert 0 < report.max_step_bytes <= bound


def test_bench_sharing_frees_remotely():
    report = run_bench(HeapConfig(arena_bytes=BIG, kappa=2), threads=4, ops=20_000,
                       mode=DeploymentMode.THREAD_LOCAL, share=0.3, seed=1, batch=200, checksum=True, record_logs=True,
                       audit_free_lists=True, switch_interval=1e-5)
    assert report.problems == []
    assert report.remote_deallocs > 0
    assert len(report.per_thread) == 4


def test_bench_in_instances_mode():
    report = run_bench(HeapConfig(arena_bytes=BIG), threads=2, ops=4000, mode=DeploymentMode.N_INSTANCES,
                       seed=1, regime=LockRegime.PAGE, batch=100)
    assert report.problems == []
    assert len(report.heap.heaps) == 2


def test_bench_argument_checks():
    with pytest.raises(ContractError):
        run_bench(HeapConfig(), threads=0)
    with pytest.raises(ContractError):
        run_bench(HeapConfig(), share=1.5)
