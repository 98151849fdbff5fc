"""Thread-safe front end over ``Heap``.

Every allocator transition runs as one atomic unit under the owning
size-class's lock.  What the lock covers depends on the regime:

* ``SIZECLASS``: bookkeeping and all byte copies of the unit happen while
  the class lock is held.
* ``PAGE``: the class lock covers only the bookkeeping.  Before it is
  released the unit takes the locks of every page it will write to or copy
  from; the copies then run under those page locks alone, so other threads
  can keep working in the class on unrelated pages.

Lock order is class lock first, then page locks.  A thread that holds page
locks without a class lock never waits for anything, which rules out
cycles.

Deployment modes pick which size-classes a thread allocates from: the
heap's single set, a private set per thread (pages and handles still come
from the shared free lists), or one of several independent heaps.
"""

import enum
import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional

from .automaton import FULL_PAGE, AutomatonConfig, AutomatonState, step_alloc, step_compact, step_dealloc
from .errors import ConfigError, ContractError
from .heap import Heap, HeapConfig, Pending
from .incremental import IncrementalModel, StepOutcome


class LockRegime(enum.Enum):
    SIZECLASS = "sizeclass"
    PAGE = "page"


class DeploymentMode(enum.Enum):
    SHARED_GLOBAL = "global"
    THREAD_LOCAL = "local"
    N_INSTANCES = "instances"


@dataclass
class ThreadCounters:
    ordinal: int
    allocs: int = 0
    deallocs: int = 0
    remote_deallocs: int = 0  # objects owned by another thread's classes
    steps: int = 0  # incremental steps after the initial one
    max_steps_per_op: int = 0


@dataclass
class _Context:
    ordinal: int
    heap: Heap
    instance: int
    classes: list
    pend: Pending
    counters: ThreadCounters


class ConcurrentHeap:
    def __init__(self, cfg: HeapConfig, regime=LockRegime.SIZECLASS, mode=DeploymentMode.SHARED_GLOBAL,
                 instances=1, record_logs=False, copy_hook: Optional[Callable] = None):
        if instances < 1:
            raise ConfigError("at least one heap instance is required")
        if mode is not DeploymentMode.N_INSTANCES:
            instances = 1
        self.regime = regime
        self.mode = mode
        if instances > 1:
            # the arena budget is split evenly between the instances
            share = cfg.arena_bytes // instances // cfg.page_bytes * cfg.page_bytes
            cfg = HeapConfig(**{**cfg.__dict__, "arena_bytes": share})
        self.cfg = cfg
        self.heaps = [Heap(cfg) for _ in range(instances)]
        # logs are checked as they are written (see LogChecker)
        self.record_logs = record_logs
        # called between bookkeeping and copying of a unit that moves bytes;
        # lets tests hold a compaction half way
        self.copy_hook = copy_hook
        self._tls = threading.local()
        self._reg_lock = threading.Lock()
        self.counters: List[ThreadCounters] = []
        if record_logs:
            for heap in self.heaps:
                for cls in heap.classes:
                    cls.log = LogChecker(cls)

    # -- thread registration ---------------------------------------------

    def _ctx(self):
        ctx = getattr(self._tls, "ctx", None)
        if ctx is None:
            ctx = self._register()
        return ctx

    def _register(self):
        with self._reg_lock:
            ordinal = len(self.counters)
            inst = ordinal % len(self.heaps)
            heap = self.heaps[inst]
            if self.mode is DeploymentMode.THREAD_LOCAL:
                classes = heap.new_class_set()
                if self.record_logs:
                    for cls in classes:
                        cls.log = LogChecker(cls)
            else:
                classes = heap.classes
            counters = ThreadCounters(ordinal)
            self.counters.append(counters)
        ctx = _Context(ordinal, heap, inst, classes,
                       Pending(locking=self.regime is LockRegime.PAGE), counters)
        self._tls.ctx = ctx
        return ctx

    @property
    def thread_ordinal(self):
        return self._ctx().ordinal

    def _encode(self, ctx, handle):
        return handle * len(self.heaps) + ctx.instance

    def _decode(self, handle):
        n = len(self.heaps)
        if not isinstance(handle, int) or handle < 0:
            raise ContractError(f"invalid handle {handle!r}")
        return self.heaps[handle % n], handle // n

    # -- atomic units ----------------------------------------------------

    def with_class_atomic(self, heap, cls, transition, locked=False):
        """Run ``transition(pending)`` as one atomic unit of ``cls``.

        With ``locked`` the caller already holds the class lock.
        """
        pend = self._ctx().pend
        lock = cls.lock
        if not locked:
            lock.acquire()
        try:
            result = transition(pend)
            heap._boundary(cls)
        except BaseException:
            pend.clear()
            pend.drop_locks()
            lock.release()
            raise
        if self.regime is LockRegime.PAGE:
            for idx in sorted(pend.pages(heap.page_bytes)):
                pend.hold(heap.pages[idx])
            lock.release()
            try:
                if self.copy_hook is not None and pend.copies:
                    self.copy_hook(cls)
                heap._finish(pend)
            finally:
                pend.drop_locks()
        else:
            try:
                if self.copy_hook is not None and pend.copies:
                    self.copy_hook(cls)
                heap._finish(pend)
            finally:
                lock.release()
        return result

    def route_deallocation(self, heap, handle):
        """Lock and return the class owning ``handle``'s object.

        The page is found from the object's address; the owner read
        without the lock is confirmed once the lock is held, since a
        concurrent move may have changed it in between.
        """
        pages, page_bytes = heap.pages, heap.page_bytes
        while True:
            addr = heap.dereference(handle)
            cls = pages[addr // page_bytes].owner
            if cls is None:
                if not heap.abstract:
                    raise ContractError(f"address {handle:#x} is not inside a page in use")
                continue
            cls.lock.acquire()
            try:
                again = heap.dereference(handle)
            except ContractError:
                cls.lock.release()
                raise
            if pages[again // page_bytes].owner is cls:
                return cls
            cls.lock.release()

    # -- public operations -----------------------------------------------

    def allocate(self, size, payload=b""):
        if len(payload) > size:
            raise ContractError("payload longer than the requested size")
        ctx = self._ctx()
        heap = ctx.heap
        cls = heap.class_for_size(size, ctx.classes)
        handle, _ = self.with_class_atomic(heap, cls, lambda pend: heap._alloc(cls, pend, payload))
        ctx.counters.allocs += 1
        return self._encode(ctx, handle)

    def deallocate(self, handle):
        ctx = self._ctx()
        heap, h = self._decode(handle)
        cls = self.route_deallocation(heap, h)
        if cls.owner_set != ctx.classes[0].owner_set or heap is not ctx.heap:
            ctx.counters.remote_deallocs += 1
        job = self.with_class_atomic(heap, cls, lambda pend: heap._dealloc(h, pend), locked=True)
        ctx.counters.deallocs += 1
        steps = 0
        while job is not None:
            out = self.with_class_atomic(heap, job.cls, lambda pend: heap._step(job, pend))
            steps += 1
            if out is not StepOutcome.PROGRESS:
                break
        if steps:
            c = ctx.counters
            c.steps += steps
            if steps > c.max_steps_per_op:
                c.max_steps_per_op = steps

    def _access(self, handle, fn):
        heap, h = self._decode(handle)
        cls = self.route_deallocation(heap, h)
        page = heap.pages[heap.dereference(h) // heap.page_bytes]
        try:
            if self.regime is LockRegime.PAGE:
                with page.lock:
                    return fn(heap, h)
            return fn(heap, h)
        finally:
            cls.lock.release()

    def read(self, handle, size=None):
        return self._access(handle, lambda heap, h: heap.read(h, size))

    def write(self, handle, data, offset=0):
        self._access(handle, lambda heap, h: heap.write(h, data, offset))

    # -- reporting (call when no operation is running) --------------------

    def classes(self):
        return [cls for heap in self.heaps for classes in heap.class_sets for cls in classes]

    def live_objects(self):
        return sum(heap.live_objects() for heap in self.heaps)

    def transient_peak(self):
        return max(heap.transient_peak for heap in self.heaps)

    def max_step_bytes(self):
        return max((cls.stats.max_step_bytes for cls in self.classes()), default=0)

    def kappa_violations(self):
        return sum(cls.stats.kappa_violations for cls in self.classes())

    def double_adoptions(self):
        return sum(fl.double_adoptions for heap in self.heaps
                   for fl in (heap.free_pages, heap.free_handles) if fl is not None)

    def audit_free_lists(self, enabled=True):
        for heap in self.heaps:
            heap.free_pages.audit(enabled)
            if heap.free_handles is not None:
                heap.free_handles.audit(enabled)

    def audit(self):
        return [p for heap in self.heaps for p in heap.audit()]

    def fragmentation_report(self):
        reports = [heap.fragmentation_report() for heap in self.heaps]
        if len(reports) == 1:
            return reports[0]
        totals = {k: sum(r["totals"][k] for r in reports) for k in reports[0]["totals"]}
        return {"classes": [row for r in reports for row in r["classes"]], "totals": totals}


class LogChecker:
    """Class log sink that replays each entry through the matching oracle
    as it arrives, so long runs need no stored log.

    Entries arrive under the class lock, hence in transition order.
    Checking stops at the first mismatch.
    """

    def __init__(self, cls):
        self.cls = cls
        self.entries = 0
        self.problems = []
        if cls.incremental and cls.pi > 1:
            self._model = IncrementalModel(cls.pi, cls.kappa, cls.iota, cls.beta)
        else:
            self._model = None
            self._cfg = AutomatonConfig(cls.pi, cls.kappa)
            self._state = AutomatonState()

    def append(self, item):
        i = self.entries
        self.entries += 1
        if self.problems:
            return
        entry, post = item
        try:
            got = self._apply(entry)
        except ContractError as exc:
            self.problems.append(f"{self.cls} entry {i} {entry}: {exc}")
            return
        want = post if self._model is not None else tuple(post[:2])
        if got != want:
            self.problems.append(f"{self.cls} entry {i} {entry}: model {got} heap {post}")

    def _apply(self, entry):
        if self._model is not None:
            return self._model.apply(entry).key()
        op, cfg, state = entry[0], self._cfg, self._state
        if op == "A":
            state = step_alloc(state, cfg)
        elif op == "D":
            where = entry[1]
            state = step_dealloc(state, cfg, FULL_PAGE if where == "full" else where[1])
        elif op == "C":
            state = step_compact(state, cfg)
        else:
            raise ContractError(f"unexpected entry {entry!r}")
        self._state = state
        return (state.h, state.u)


def replay_class_log(cls):
    """Check a class's log against the oracle.

    Returns a list of mismatch descriptions; an empty list means every
    recorded transition was legal and produced the recorded state.
    """
    if cls.log is None:
        raise ContractError(f"{cls} has no log")
    if isinstance(cls.log, LogChecker):
        return list(cls.log.problems)
    checker = LogChecker(cls)
    for item in cls.log:
        checker.append(item)
        if checker.problems:
            break
    return checker.problems
