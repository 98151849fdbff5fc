"""Microbenchmark loop, trace replay and their reports.

Latency is reported as bytes copied per atomic step and incremental steps
per operation; wall-clock rates are secondary and are left out of the CSV
unless asked for, so that seeded single-threaded runs give identical files.
"""

import collections
import csv
import io
import random
import sys
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

from .errors import ContractError, TraceError, UnsupportedSize
from .heap import Heap, HeapConfig
from .runtime import ConcurrentHeap, DeploymentMode, LockRegime, replay_class_log
from .trace import PRESETS, SizeDistribution, TraceOp

CSV_VERSION = "# compactfit-report v1"
DEFAULT_BATCH = 2048


@dataclass
class RunReport:
    label: str
    kappa: Optional[int]
    iota: Optional[int]
    threads: int = 1
    mode: str = DeploymentMode.SHARED_GLOBAL.value
    locks: str = LockRegime.SIZECLASS.value
    ops: int = 0
    allocs: int = 0
    deallocs: int = 0
    remote_deallocs: int = 0
    live_objects: int = 0
    max_step_bytes: int = 0
    max_steps_per_op: int = 0
    compactions: int = 0
    bytes_copied: int = 0
    pages_used: int = 0
    pages_peak: int = 0
    notfull_pages: int = 0
    fragmentation: int = 0
    fragmentation_peak: int = 0
    transient_peak: int = 0
    kappa_violations: int = 0
    dealloc_conflicts: int = 0
    compaction_conflicts: int = 0
    # secondary, hardware-bound
    seconds: float = 0.0
    alloc_seconds: float = 0.0
    free_seconds: float = 0.0
    per_class: List[dict] = field(default_factory=list)
    per_thread: List[dict] = field(default_factory=list)
    problems: List[str] = field(default_factory=list)

    @property
    def ops_per_sec(self):
        return self.ops / self.seconds if self.seconds else 0.0

    @property
    def allocs_per_sec(self):
        return self.allocs / self.alloc_seconds if self.alloc_seconds else 0.0

    @property
    def frees_per_sec(self):
        return self.deallocs / self.free_seconds if self.free_seconds else 0.0

    def summary(self):
        k = "inf" if self.kappa is None else self.kappa
        i = "inf" if self.iota is None else self.iota
        return (f"{self.label}: kappa={k} iota={i} threads={self.threads} ops={self.ops} "
                f"live={self.live_objects} pages={self.pages_used} (peak {self.pages_peak}) "
                f"F={self.fragmentation} (peak {self.fragmentation_peak}) "
                f"max_step_bytes={self.max_step_bytes} transient_peak={self.transient_peak} "
                f"ops/s={self.ops_per_sec:.0f}")


_CSV_FIELDS = [
    "label", "kappa", "iota", "threads", "mode", "locks", "ops", "allocs", "deallocs", "remote_deallocs",
    "live_objects", "max_step_bytes", "max_steps_per_op", "compactions", "bytes_copied", "pages_used",
    "pages_peak", "notfull_pages", "fragmentation", "fragmentation_peak", "transient_peak",
    "kappa_violations", "dealloc_conflicts", "compaction_conflicts",
]
_TIMING_FIELDS = ["seconds", "ops_per_sec", "allocs_per_sec", "frees_per_sec"]


def write_reports(reports: Sequence[RunReport], out, timing=False):
    fields = _CSV_FIELDS + (_TIMING_FIELDS if timing else [])
    out.write(CSV_VERSION + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(fields)
    for r in reports:
        row = []
        for f in fields:
            v = getattr(r, f)
            if v is None:
                v = "inf"
            elif isinstance(v, float):
                v = f"{v:.3f}"
            row.append(v)
        w.writerow(row)


def reports_csv(reports, timing=False):
    buf = io.StringIO()
    write_reports(reports, buf, timing)
    return buf.getvalue()


def _fill_from_heaps(report, heaps):
    classes = [c for heap in heaps for cs in heap.class_sets for c in cs]
    for heap in heaps:
        frag = heap.fragmentation_report()
        report.per_class.extend(frag["classes"])
        report.pages_used += frag["totals"]["pages_used"]
        report.notfull_pages += frag["totals"]["notfull_count"]
        report.fragmentation += frag["totals"]["F"]
        report.transient_peak = max(report.transient_peak, heap.transient_peak)
        report.live_objects += heap.live_objects()
    for c in classes:
        st = c.stats
        report.max_step_bytes = max(report.max_step_bytes, st.max_step_bytes)
        report.compactions += st.compactions
        report.bytes_copied += st.bytes_copied
        report.kappa_violations += st.kappa_violations
        report.dealloc_conflicts += st.dealloc_conflicts
        report.compaction_conflicts += st.compaction_conflicts


def reconcile(report, heaps):
    """Counters against an independent scan of the heaps."""
    problems = []
    if report.allocs - report.deallocs != report.live_objects:
        problems.append(f"allocs {report.allocs} - deallocs {report.deallocs} != live {report.live_objects}")
    scanned = 0
    for heap in heaps:
        problems.extend(heap.audit())
        scanned += sum(p.bitmap.bit_count() for p in heap.pages if p.owner is not None)
    if scanned != report.live_objects:
        problems.append(f"{scanned} used blocks on pages but {report.live_objects} live objects")
    return problems


def _payload(tag, size):
    word = tag.to_bytes(8, "little")
    return (word * (size // 8 + 1))[:size]


# -- microbenchmark ------------------------------------------------------


def run_bench(cfg: HeapConfig, threads=1, ops=100_000, mode=DeploymentMode.SHARED_GLOBAL,
              regime=LockRegime.SIZECLASS, dist: Optional[SizeDistribution] = None, seed=0,
              batch=DEFAULT_BATCH, share=0.0, instances=None, checksum=False, record_logs=False,
              audit_free_lists=False, switch_interval=None, label="bench") -> RunReport:
    """Each thread allocates ``batch`` objects, frees them all in random
    order and starts over until its share of ``ops`` is used up.

    With ``share > 0`` each object is, with that probability, passed to a
    randomly chosen other thread which frees it instead (the allocating
    thread skips it).  ``checksum`` verifies every object's contents
    before freeing it and reports mismatches as problems.
    """
    if threads < 1:
        raise ContractError("at least one thread is required")
    if not 0.0 <= share <= 1.0:
        raise ContractError("share must lie in [0, 1]")
    dist = dist or PRESETS["espresso-like"]
    if instances is None:
        instances = threads if mode is DeploymentMode.N_INSTANCES else 1
    ch = ConcurrentHeap(cfg, regime, mode, instances, record_logs=record_logs)
    dist = dist.limited(ch.heaps[0].largest_usable)
    if audit_free_lists:
        ch.audit_free_lists()
    quotas = [ops // threads + (1 if t < ops % threads else 0) for t in range(threads)]
    inboxes = [collections.deque() for _ in range(threads)]
    bad = []
    timings = [None] * threads
    errors = []
    start = threading.Barrier(threads)

    def worker(t):
        try:
            rng = random.Random(seed * 1_000_003 + t)
            draw = dist.sampler(rng)
            quota = quotas[t]
            inbox = inboxes[t]
            others = [o for o in range(threads) if o != t]
            done = 0
            alloc_ns = free_ns = 0
            tag = t << 40
            clock = time.perf_counter_ns
            ch.thread_ordinal  # register before the clock starts
            start.wait()

            def free(obj):
                nonlocal free_ns, done
                handle, data = obj
                if checksum and ch.read(handle, len(data)) != data:
                    bad.append(handle)
                t0 = clock()
                ch.deallocate(handle)
                free_ns += clock() - t0
                done += 1

            while done < quota:
                mine = []
                for _ in range(min(batch, quota - done)):
                    size = draw()
                    tag += 1
                    data = _payload(tag, size) if checksum else b""
                    t0 = clock()
                    handle = ch.allocate(size, data)
                    alloc_ns += clock() - t0
                    mine.append((handle, data))
                    done += 1
                rng.shuffle(mine)
                for obj in mine:
                    if done >= quota:
                        break
                    if others and share and rng.random() < share:
                        inboxes[rng.choice(others)].append(obj)
                    else:
                        free(obj)
                    if inbox and done < quota:
                        free(inbox.popleft())
            timings[t] = (alloc_ns, free_ns)
        except BaseException as exc:  # reported, the other threads go on
            errors.append(f"thread {t}: {exc!r}")

    old = sys.getswitchinterval()
    if switch_interval is not None:
        sys.setswitchinterval(switch_interval)
    try:
        workers = [threading.Thread(target=worker, args=(t,)) for t in range(threads)]
        t0 = time.perf_counter()
        for w in workers:
            w.start()
        for w in workers:
            w.join()
        elapsed = time.perf_counter() - t0
    finally:
        sys.setswitchinterval(old)

    report = RunReport(label, _one(cfg.kappa), cfg.iota, threads, mode.value, regime.value)
    report.seconds = elapsed
    for c in ch.counters:
        report.allocs += c.allocs
        report.deallocs += c.deallocs
        report.remote_deallocs += c.remote_deallocs
        report.max_steps_per_op = max(report.max_steps_per_op, c.max_steps_per_op)
        report.per_thread.append(asdict(c))
    report.ops = report.allocs + report.deallocs
    timed = [x for x in timings if x is not None]
    if timed:
        report.alloc_seconds = max(a for a, _ in timed) / 1e9
        report.free_seconds = max(f for _, f in timed) / 1e9
    _fill_from_heaps(report, ch.heaps)
    report.pages_peak = report.pages_used
    report.fragmentation_peak = report.fragmentation
    report.problems.extend(errors)
    report.problems.extend(f"payload mismatch for handle {h}" for h in bad)
    report.problems.extend(reconcile(report, ch.heaps))
    if record_logs:
        for cls in ch.classes():
            report.problems.extend(replay_class_log(cls))
    if audit_free_lists and ch.double_adoptions():
        report.problems.append(f"{ch.double_adoptions()} free-list sublists issued twice")
    report.heap = ch
    return report


def _one(kappa):
    if kappa is None or isinstance(kappa, int):
        return kappa
    return None


# -- trace replay -----------------------------------------------------------


def run_replay(cfg: HeapConfig, ops: Sequence[TraceOp], label="replay", checksum=False) -> RunReport:
    """Replay a parsed trace on a fresh single-threaded heap."""
    heap = Heap(cfg)
    handles: Dict[int, tuple] = {}
    frag: Dict[object, int] = {}
    f_total = f_peak = pages_peak = 0
    allocs = deallocs = 0
    bad = 0
    t_alloc = t_free = 0
    clock = time.perf_counter_ns
    t_start = time.perf_counter()
    for n, op in enumerate(ops, 1):
        if op.kind == "a":
            data = _payload(op.id, op.size) if checksum else b""
            try:
                t0 = clock()
                h = heap.allocate(op.size, data)
                t_alloc += clock() - t0
            except UnsupportedSize as exc:
                raise TraceError(f"operation {n}: {exc}") from None
            cls = heap.class_for_size(op.size)
            handles[op.id] = (h, data)
            allocs += 1
        else:
            try:
                h, data = handles.pop(op.id)
            except KeyError:
                raise TraceError(f"operation {n}: free of unknown id {op.id}") from None
            if checksum and heap.read(h, len(data)) != data:
                bad += 1
            cls = heap.pages[heap.dereference(h) // heap.page_bytes].owner
            t0 = clock()
            heap.deallocate(h)
            t_free += clock() - t0
            deallocs += 1
        u = cls.notfull
        f_cls = u.size * cls.pi - sum(p.used for p in u)
        f_total += f_cls - frag.get(cls, 0)
        frag[cls] = f_cls
        f_peak = max(f_peak, f_total)
        pages_peak = max(pages_peak, heap.pages_in_use)
    report = RunReport(label, _one(cfg.kappa), cfg.iota)
    report.seconds = time.perf_counter() - t_start
    report.alloc_seconds = t_alloc / 1e9
    report.free_seconds = t_free / 1e9
    report.allocs, report.deallocs = allocs, deallocs
    report.ops = allocs + deallocs
    _fill_from_heaps(report, [heap])
    report.pages_peak = max(pages_peak, report.pages_used)
    report.fragmentation_peak = max(f_peak, report.fragmentation)
    if bad:
        report.problems.append(f"{bad} payload mismatches")
    report.problems.extend(reconcile(report, [heap]))
    report.heap = heap
    return report


def kappa_sweep(base: HeapConfig, ops: Sequence[TraceOp], kappas: Sequence[Optional[int]],
                label="replay") -> List[RunReport]:
    out = []
    for k in kappas:
        cfg = HeapConfig(**{**base.__dict__, "kappa": k})
        out.append(run_replay(cfg, ops, label=label))
    return out
