"""Incremental compaction: job records and the incremental size-class model.

An object move is split into atomic steps of at most ``iota`` bytes.  The
class state grows by the source page: ``u_s`` used blocks in it (0 means no
source page), ``s`` in-flight source blocks and their moved prefixes ``m``.
Pages that lost their last used block while moves out of them are still in
flight sit in the emptying pool until those moves end.

``IncrementalModel`` replays the per-class logs written by the heap and
rejects any step the protocol does not allow.  Log entries are tuples::

    ("A",)                         allocation
    ("D", where, canceled_job)     where: ("nf", i) | "src" | "full"
    ("I", new_job, replaced_job)   initial step; replaced_job marks a conflict
    ("Ij", job) / ("IE", job)      further step on a source / emptying page
"""

import enum
import itertools
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .automaton import AutomatonState
from .errors import ContractError


class StepOutcome(enum.Enum):
    PROGRESS = "progress"
    DONE = "done"
    CANCELED = "canceled"


_job_ids = itertools.count(1)


@dataclass(eq=False)
class CompactionJob:
    """One in-flight move of an object from ``source`` to ``target``."""

    cls: object
    source: int
    target: int
    handle: int
    moved: int = 0
    canceled: bool = False
    done: bool = False
    torn_down: bool = False
    owns_handle: bool = False  # set when a deallocation canceled the move
    id: int = field(default_factory=lambda: next(_job_ids))

    @property
    def live(self):
        return not (self.done or self.canceled)


@dataclass(frozen=True)
class IncrementalClassState:
    h: int = 0
    u: Tuple[int, ...] = ()
    u_s: int = 0
    m: Tuple[int, ...] = ()

    @property
    def n(self):
        return len(self.u)

    @property
    def s(self):
        return len(self.m)

    @property
    def base(self):
        return AutomatonState(self.h, self.u)

    def key(self):
        return (self.h, self.u, self.u_s, self.m)


def drive_to_completion(heap, job):
    """Step ``job`` until it finishes or is canceled; returns the number of
    steps taken after the initial one."""
    steps = 0
    while job is not None and heap.step(job) is StepOutcome.PROGRESS:
        steps += 1
    return steps + (1 if job is not None else 0)


class IncrementalModel:
    """Executable incremental size-class automaton for one class."""

    def __init__(self, pi, kappa, iota, beta):
        if pi < 2:
            raise ContractError("incremental model needs pi > 1")
        self.pi, self.kappa, self.iota, self.beta = pi, kappa, iota, beta
        self.h = 0
        self.u = []
        self.u_s = 0
        self.src_jobs = {}  # job id -> moved, insertion ordered
        self.e_jobs = {}

    def state(self):
        return IncrementalClassState(self.h, tuple(self.u), self.u_s, tuple(self.src_jobs.values()))

    def _compacting(self):
        return len(self.u) == self.kappa + 1 if self.kappa is not None else False

    def _maybe_convert(self):
        # a source page whose moves all ended rejoins the not-full pages
        # when there is room, otherwise it stays as potential source page
        if self.u_s > 0 and not self.src_jobs and len(self.u) < self.kappa:
            self.u.append(self.u_s)
            self.u_s = 0

    def apply(self, entry):
        op = entry[0]
        if op == "A":
            self._alloc()
        elif op == "D":
            self._dealloc(entry[1], entry[2])
        elif op == "I":
            self._initial(entry[1], entry[2])
        elif op == "Ij":
            self._step(entry[1], self.src_jobs, source_page=True)
        elif op == "IE":
            self._step(entry[1], self.e_jobs, source_page=False)
        else:
            raise ContractError(f"unknown log entry {entry!r}")
        return self.state()

    def _alloc(self):
        if self._compacting():
            raise ContractError("allocation in compaction state")
        u = self.u
        if not u:
            u.append(1)
        elif u[-1] < self.pi - 1:
            u[-1] += 1
        else:
            u.pop()
        self.h += 1

    def _dealloc(self, where, canceled):
        if self._compacting():
            raise ContractError("deallocation in compaction state")
        if self.h <= 0:
            raise ContractError("deallocation in empty class")
        u = self.u
        if where == "src":
            if self.u_s <= 0:
                raise ContractError("no source page")
            self.u_s -= 1
            if self.u_s == 0:
                self.e_jobs.update(self.src_jobs)
                self.src_jobs = {}
        elif where == "full":
            if self.h - sum(u) - self.u_s <= 0:
                raise ContractError("no full page")
            u.append(self.pi - 1)
        else:
            _, i = where
            if not 0 <= i < len(u):
                raise ContractError(f"no not-full page {i}")
            if u[i] > 1:
                u[i] -= 1
            else:
                del u[i]
        self.h -= 1
        if canceled is not None:
            if canceled in self.src_jobs:
                del self.src_jobs[canceled]
                self._maybe_convert()
            elif canceled in self.e_jobs:
                del self.e_jobs[canceled]
            else:
                raise ContractError(f"cancel of unknown job {canceled}")

    def _initial(self, new_job, replaced):
        if not self._compacting():
            raise ContractError("initial compaction step outside compaction state")
        if self.u_s == 0:
            if new_job is not None or replaced is not None:
                raise ContractError("designating a source page moves nothing")
            self.u_s = self.u.pop(0)
            return
        self.u.pop()  # target page is full now
        self.u_s -= 1
        first = min(self.iota, self.beta)
        if replaced is not None:
            if replaced not in self.e_jobs:
                raise ContractError(f"conflict with job {replaced} outside the emptying pool")
            del self.e_jobs[replaced]
            if first < self.beta:
                self.e_jobs[new_job] = first
        elif first < self.beta:
            self.src_jobs[new_job] = first
        if self.u_s == 0:
            self.e_jobs.update(self.src_jobs)
            self.src_jobs = {}

    def _step(self, job, pool, source_page):
        if job not in pool:
            raise ContractError(f"step of job {job} that is not in flight there")
        moved = pool[job] + self.iota
        if moved < self.beta:
            pool[job] = moved
            return
        del pool[job]
        if source_page:
            self._maybe_convert()
