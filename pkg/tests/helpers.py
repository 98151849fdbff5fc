"""Shared drivers for the test-suite."""

import random
import zlib

from compactfit import layout
from compactfit.automaton import FULL_PAGE, AutomatonConfig, AutomatonState, StateClass, classify
from compactfit.automaton import step_alloc, step_compact, step_dealloc
from compactfit.errors import ContractError
from compactfit.heap import FULL, Heap, HeapConfig
from compactfit.incremental import StepOutcome
from compactfit.runtime import replay_class_log


def block_for_pi(pi, page_bytes=4096):
    """Largest word-multiple block size giving exactly ``pi`` blocks per
    page in a heap whose only class uses it."""
    beta = layout.payload_bytes(page_bytes, 8 * 2) // pi
    while True:
        beta -= beta % layout.WORD
        got = layout.blocks_per_page(page_bytes, beta, beta)
        if got == pi:
            return beta
        if got < pi:
            beta -= layout.WORD
        else:
            beta += layout.WORD


def single_class_heap(pi, kappa, iota=None, page_bytes=4096, pages=256):
    beta = block_for_pi(pi, page_bytes)
    cfg = HeapConfig(arena_bytes=pages * page_bytes, page_bytes=page_bytes,
                     class_block_sizes=[beta], kappa=kappa, iota=iota)
    heap = Heap(cfg)
    assert heap.classes[0].pi == pi
    return heap


def selector_for(heap, handle):
    """Automaton page selector for freeing ``handle`` in its current page."""
    page = heap.page_of_handle(handle)
    if page.state == FULL:
        return FULL_PAGE
    return page.owner.notfull.index(page)


class OracleRun:
    """Random legal alloc/free walk checked against the automaton after
    every operation."""

    def __init__(self, pi, kappa, seed, max_live=None):
        self.heap = single_class_heap(pi, kappa)
        self.cls = self.heap.classes[0]
        self.cfg = AutomatonConfig(pi, kappa)
        self.state = AutomatonState()
        self.rng = random.Random(seed)
        self.live = []
        self.max_live = max_live or max(6 * pi, 24)
        self.ops = 0
        self.mismatches = []
        self.boundary_violations = 0

    def step(self):
        heap, rng, live = self.heap, self.rng, self.live
        usable = self.cls.usable
        if live and (len(live) >= self.max_live or rng.random() < 0.5):
            j = rng.randrange(len(live))
            live[j], live[-1] = live[-1], live[j]
            handle = live.pop()
            sel = selector_for(heap, handle)
            heap.deallocate(handle)
            self.state = step_dealloc(self.state, self.cfg, sel)
            if classify(self.state, self.cfg) is StateClass.COMPACTION:
                self.state = step_compact(self.state, self.cfg)
        else:
            live.append(heap.allocate(usable))
            self.state = step_alloc(self.state, self.cfg)
        self.ops += 1
        got = heap.project_state(self.cls)
        if got != self.state:
            self.mismatches.append((self.ops, got, self.state))
        if self.cfg.kappa is not None and self.cls.notfull_count > self.cfg.kappa:
            self.boundary_violations += 1

    def run(self, n):
        for _ in range(n):
            self.step()
            if self.mismatches:
                break
        return self


def checksum(data):
    return zlib.crc32(data)


class InterleavedIncremental:
    """Several simulated threads on one heap, each either idle or driving
    one in-flight move a step at a time, chosen at random per tick.

    Objects carry random payloads; a sample is verified on every tick and
    every freed handle must be unreachable at once.
    """

    def __init__(self, seed, iota, kappa=1, threads=4, beta=256, page_bytes=4096, pages=256, max_live=300):
        cfg = HeapConfig(arena_bytes=pages * page_bytes, page_bytes=page_bytes,
                         class_block_sizes=[beta], kappa=kappa, iota=iota)
        self.heap = Heap(cfg)
        self.cls = self.heap.classes[0]
        self.cls.log = []
        self.rng = random.Random(seed)
        self.jobs = [None] * threads
        self.live = {}
        self.max_live = max_live
        self.bad_payloads = 0
        self.reachable_after_free = 0
        self.ops = 0
        self.canceled = 0

    def _verify(self, handle):
        data = self.live[handle]
        if self.heap.read(handle, len(data)) != data:
            self.bad_payloads += 1

    def tick(self):
        heap, rng = self.heap, self.rng
        t = rng.randrange(len(self.jobs))
        job = self.jobs[t]
        if job is not None:
            out = heap.step(job)
            if out is StepOutcome.CANCELED:
                self.canceled += 1
            if out is not StepOutcome.PROGRESS:
                self.jobs[t] = None
            return
        if self.live and (rng.random() < 0.5 or len(self.live) >= self.max_live):
            handle = rng.choice(list(self.live))
            self._verify(handle)
            del self.live[handle]
            self.jobs[t] = heap.deallocate(handle, drive=False)
            try:
                heap.dereference(handle)
                self.reachable_after_free += 1
            except ContractError:
                pass
        else:
            size = self.cls.usable
            data = rng.randbytes(size)
            self.live[heap.allocate(size, data)] = data
        self.ops += 1
        if self.live:
            for handle in rng.sample(list(self.live), min(3, len(self.live))):
                self._verify(handle)

    def drain(self):
        for t, job in enumerate(self.jobs):
            while job is not None:
                if self.heap.step(job) is not StepOutcome.PROGRESS:
                    job = None
            self.jobs[t] = None

    def run(self, n):
        for _ in range(n):
            self.tick()
        self.drain()
        for handle in self.live:
            self._verify(handle)
        return self

    def replay_problems(self):
        return replay_class_log(self.cls)
