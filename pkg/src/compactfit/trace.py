"""Allocation traces and object-size distributions.

Trace files are plain text, one operation per line::

    # comment
    a <id> <size>     allocate size bytes and bind the object to id
    f <id>            free the object bound to id

Distribution files list ``<size> <weight>`` pairs in the same style.
"""

import bisect
import itertools
import random
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from .errors import TraceError


@dataclass(frozen=True)
class TraceOp:
    kind: str  # "a" or "f"
    id: int
    size: int = 0

    def line(self):
        return f"a {self.id} {self.size}" if self.kind == "a" else f"f {self.id}"


def _int(token, lineno, what):
    try:
        return int(token)
    except ValueError:
        raise TraceError(f"bad {what} {token!r}", lineno) from None


def parse_trace(lines: Iterable[str]) -> List[TraceOp]:
    """Parse and validate a trace; ids must be live exactly when freed."""
    ops = []
    live = set()
    for lineno, raw in enumerate(lines, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if parts[0] == "a" and len(parts) == 3:
            oid = _int(parts[1], lineno, "id")
            size = _int(parts[2], lineno, "size")
            if size <= 0:
                raise TraceError(f"size must be positive, got {size}", lineno)
            if oid in live:
                raise TraceError(f"id {oid} is already live", lineno)
            live.add(oid)
            ops.append(TraceOp("a", oid, size))
        elif parts[0] == "f" and len(parts) == 2:
            oid = _int(parts[1], lineno, "id")
            if oid not in live:
                raise TraceError(f"free of unknown id {oid}", lineno)
            live.remove(oid)
            ops.append(TraceOp("f", oid))
        else:
            raise TraceError(f"malformed line {raw.rstrip()!r}", lineno)
    return ops


def read_trace(path) -> List[TraceOp]:
    with open(path) as fh:
        return parse_trace(fh)


def format_trace(ops: Sequence[TraceOp], header: Optional[str] = None) -> str:
    lines = [f"# {header}"] if header else []
    lines.extend(op.line() for op in ops)
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SizeDistribution:
    entries: Tuple[Tuple[int, float], ...]
    name: str = "custom"

    def __post_init__(self):
        if not self.entries:
            raise TraceError("a size distribution needs at least one entry")
        for size, weight in self.entries:
            if size <= 0:
                raise TraceError(f"size must be positive, got {size}")
            if not weight > 0:
                raise TraceError(f"weight must be positive, got {weight}")

    def sizes(self):
        return [s for s, _ in self.entries]

    def limited(self, max_size):
        """Drop sizes above ``max_size`` (objects that fit no page)."""
        kept = tuple((s, w) for s, w in self.entries if s <= max_size)
        if not kept:
            raise TraceError(f"no size of {self.name} fits {max_size} bytes")
        return SizeDistribution(kept, self.name)

    def sampler(self, rng: random.Random):
        sizes = self.sizes()
        cum = list(itertools.accumulate(w for _, w in self.entries))
        total = cum[-1]

        def draw():
            return sizes[bisect.bisect_right(cum, rng.random() * total)]

        return draw

    def sample(self, rng: random.Random, n: int):
        draw = self.sampler(rng)
        return [draw() for _ in range(n)]


def parse_distribution(lines: Iterable[str], name="file") -> SizeDistribution:
    entries = []
    for lineno, raw in enumerate(lines, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2:
            raise TraceError(f"expected '<size> <weight>', got {raw.rstrip()!r}", lineno)
        size = _int(parts[0], lineno, "size")
        try:
            weight = float(parts[1])
        except ValueError:
            raise TraceError(f"bad weight {parts[1]!r}", lineno) from None
        if size <= 0 or not weight > 0:
            raise TraceError("size and weight must be positive", lineno)
        entries.append((size, weight))
    if not entries:
        raise TraceError("empty distribution")
    return SizeDistribution(tuple(entries), name)


# The "-like" presets are approximations.  Only the quoted shares of the
# dominant sizes are known; the rest of each table is filler spread evenly
# (emacs-like, hummingbird-like) or an invented small-object skew
# (espresso-like).
_EMACS_FILLER = (16, 24, 32, 48, 64, 80, 128, 256)
_HUMMINGBIRD_FILLER = (16, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384)

PRESETS = {
    "espresso-like": SizeDistribution(
        ((8, 20), (16, 25), (24, 15), (32, 12), (48, 8), (64, 7), (128, 5), (256, 4),
         (512, 2), (1024, 1), (4096, 1)), "espresso-like"),
    "emacs-like": SizeDistribution(
        ((40, 408), (648, 120), (104, 88)) + tuple((s, 23) for s in _EMACS_FILLER), "emacs-like"),
    "hummingbird-like": SizeDistribution(
        ((8, 250), (32, 230)) + tuple((s, 52) for s in _HUMMINGBIRD_FILLER), "hummingbird-like"),
}


def load_distribution(spec: str) -> SizeDistribution:
    """A preset name or the path of a distribution file."""
    if spec in PRESETS:
        return PRESETS[spec]
    try:
        with open(spec) as fh:
            return parse_distribution(fh, spec)
    except OSError as exc:
        raise TraceError(f"unknown preset or unreadable file {spec!r}: {exc.strerror}") from None


DYNAMICS = ("ramp", "steady", "sawtooth")


def _target(dynamics, i, ops, peak):
    if dynamics == "ramp":
        return peak * i / ops
    if dynamics == "steady":
        return min(peak, peak * 5 * i / ops)
    period = max(ops // 4, 1)
    phase = (i % period) / period
    # climb to the peak in the first half of a period, fall to a quarter
    if phase < 0.5:
        return peak * (0.25 + 1.5 * phase) if i >= period else peak * 2 * phase
    return peak * (1.0 - 1.5 * (phase - 0.5))


def generate_trace(dist: SizeDistribution, ops: int, seed: int, dynamics="steady",
                   peak_live: Optional[int] = None) -> List[TraceOp]:
    """Seeded synthetic trace whose live-object count follows ``dynamics``.

    At each step the generator leans towards allocation when the live set
    is below the current target and towards freeing when above, with
    random churn in a band around the target.
    """
    if dynamics not in DYNAMICS:
        raise TraceError(f"unknown dynamics {dynamics!r}; choose from {', '.join(DYNAMICS)}")
    if ops < 0:
        raise TraceError("operation count must be non-negative")
    rng = random.Random(seed)
    draw = dist.sampler(rng)
    peak = peak_live if peak_live is not None else max(ops // 4, 1)
    band = max(peak / 10, 1.0)
    live: List[int] = []
    next_id = 1
    out = []
    for i in range(ops):
        target = _target(dynamics, i, ops, peak)
        p_alloc = min(max(0.5 + (target - len(live)) / (2 * band), 0.05), 0.95)
        if not live or rng.random() < p_alloc:
            out.append(TraceOp("a", next_id, draw()))
            live.append(next_id)
            next_id += 1
        else:
            j = rng.randrange(len(live))
            live[j], live[-1] = live[-1], live[j]
            out.append(TraceOp("f", live.pop()))
    return out
