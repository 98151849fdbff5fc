"""The allocator: pages, size-classes, handles and partial compaction.

The heap owns one contiguous arena cut into equal pages.  A page in use
belongs to exactly one size-class and holds ``pi`` blocks of the class's
block size.  Each class keeps its full and not-full pages on two doubly
linked lists; allocation fills the last not-full page, and a deallocation
that would leave more than ``kappa`` not-full pages moves one object from
the first not-full page into the block just freed.

Objects are reached through handles: a handle indexes the forwarding
table, whose entry is the object's current address.  Moving an object
rewrites that one entry; the backlink word at the start of every block
leads from a block back to its handle.

With a finite compaction increment ``iota`` moves are incremental (see
``compactfit.incremental``).

Methods prefixed with ``_`` are the atomic units.  They only do
bookkeeping and queue byte copies and page releases on a ``Pending``
record; ``_finish`` performs them.  The public methods run one unit and
finish it at once, which is what single-threaded callers want;
``compactfit.runtime`` schedules the same units under locks.
"""

import bisect
import enum
import struct
import threading
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from . import layout
from .automaton import AutomatonState
from .errors import ConfigError, ContractError, OutOfMemory, UnsupportedSize
from .freelist import DEFAULT_SPILL_BOUND, NodeStore, PageStore, TwoLevelFreeList
from .incremental import CompactionJob, IncrementalClassState, StepOutcome

CLASS_RECORD_BYTES = 128

FREE = "free"
NOT_FULL = "not-full"
FULL = "full"
SOURCE = "source"
EMPTYING = "emptying"


class AddressingMode(enum.Enum):
    ABSTRACT = "abstract"
    DIRECT = "direct"


Kappa = Optional[int]


@dataclass
class HeapConfig:
    arena_bytes: int = 1 << 20
    page_bytes: int = layout.DEFAULT_PAGE_BYTES
    class_block_sizes: Optional[Sequence[int]] = None
    kappa: Union[Kappa, Sequence[Kappa]] = None
    iota: Optional[int] = None
    addressing_mode: AddressingMode = AddressingMode.ABSTRACT
    spill_bound: int = DEFAULT_SPILL_BOUND

    def block_sizes(self):
        if self.class_block_sizes is None:
            return layout.default_class_sizes(self.page_bytes)
        return list(self.class_block_sizes)

    def kappas(self):
        sizes = self.block_sizes()
        if self.kappa is None or isinstance(self.kappa, int):
            return [self.kappa] * len(sizes)
        kappas = list(self.kappa)
        if len(kappas) != len(sizes):
            raise ConfigError("kappa list length differs from the number of size-classes")
        return kappas

    def validate(self):
        sizes = self.block_sizes()
        if not sizes:
            raise ConfigError("at least one size-class is required")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("block sizes must be strictly ascending")
        if sizes[0] < layout.WORD or sizes[0] % layout.WORD:
            raise ConfigError(f"block sizes must be word multiples, got {sizes[0]}")
        abstract = self.addressing_mode is AddressingMode.ABSTRACT
        if abstract and sizes[0] <= layout.WORD:
            raise ConfigError("ABSTRACT mode needs blocks larger than the backlink word")
        payload = layout.payload_bytes(self.page_bytes, sizes[0])
        if payload <= 0 or sizes[-1] > payload:
            raise ConfigError(f"block size {sizes[-1]} exceeds page payload {payload}")
        if self.arena_bytes < self.page_bytes:
            raise ConfigError("arena too small for one page")
        if self.arena_bytes % self.page_bytes:
            raise ConfigError("page size must divide the arena size")
        kappas = self.kappas()
        for k in kappas:
            if k is not None and k < 1:
                raise ConfigError(f"kappa must be >= 1 or unbounded, got {k}")
        if not abstract and any(k is not None for k in kappas):
            raise ConfigError("DIRECT addressing cannot move objects; kappa must be unbounded")
        if self.iota is not None and self.iota < 1:
            raise ConfigError("iota must be positive or unbounded")
        if self.spill_bound < 1:
            raise ConfigError("spill bound must be positive")
        return self


class Page:
    __slots__ = (
        "index", "base", "prev", "next", "used", "bitmap", "owner", "state",
        "source_mask", "cblock", "jobs", "lock",
    )

    def __init__(self, index, base):
        self.index = index
        self.base = base
        self.prev = self.next = None
        self.used = 0
        self.bitmap = 0
        self.owner = None
        self.state = FREE
        self.source_mask = 0  # in-flight source blocks
        self.cblock = {}  # block index -> job; the compaction-block side table
        self.jobs = []  # jobs whose source block lies here, oldest first
        self.lock = threading.Lock()

    def __repr__(self):
        return f"<Page {self.index} {self.state} used={self.used}>"


class PageList:
    """Intrusive doubly linked list threaded through ``Page.prev/next``."""

    __slots__ = ("head", "tail", "size")

    def __init__(self):
        self.head = self.tail = None
        self.size = 0

    def __len__(self):
        return self.size

    def __iter__(self):
        page = self.head
        while page is not None:
            yield page
            page = page.next

    def append(self, page):
        page.prev, page.next = self.tail, None
        if self.tail is None:
            self.head = page
        else:
            self.tail.next = page
        self.tail = page
        self.size += 1

    def remove(self, page):
        if page.prev is None:
            self.head = page.next
        else:
            page.prev.next = page.next
        if page.next is None:
            self.tail = page.prev
        else:
            page.next.prev = page.prev
        page.prev = page.next = None
        self.size -= 1

    def popleft(self):
        page = self.head
        self.remove(page)
        return page

    def index(self, page):
        for i, p in enumerate(self):
            if p is page:
                return i
        raise ValueError(page)


@dataclass
class ClassStats:
    allocs: int = 0
    deallocs: int = 0
    compactions: int = 0
    copy_steps: int = 0
    bytes_copied: int = 0
    max_step_bytes: int = 0
    dealloc_conflicts: int = 0
    compaction_conflicts: int = 0
    kappa_violations: int = 0
    max_notfull: int = 0


class SizeClass:
    def __init__(self, index, beta, pi, kappa, iota, usable, owner_set, record_offset):
        self.index = index
        self.beta = beta
        self.pi = pi
        self.kappa = kappa
        self.iota = iota
        self.usable = usable
        self.owner_set = owner_set
        self.record_offset = record_offset
        self.full = PageList()
        self.notfull = PageList()
        self.source = None
        self.emptying = set()
        self.pending_target = None  # page awaiting a deferred compaction
        self.h = 0
        self.lock = threading.Lock()
        self.log = None
        self.stats = ClassStats()

    @property
    def notfull_count(self):
        return self.notfull.size

    @property
    def incremental(self):
        return self.iota is not None and self.kappa is not None

    def __repr__(self):
        return f"<SizeClass beta={self.beta} pi={self.pi} kappa={self.kappa}>"


class Pending:
    """Arena writes, byte copies and page releases queued by one atomic
    unit.

    When ``locking`` is set (page lock regime) ``hold`` takes a page's lock
    the first time bookkeeping needs that page's bytes to be stable; the
    locks stay held until the queued copies are done.
    """

    __slots__ = ("writes", "copies", "release", "locking", "held")

    def __init__(self, locking=False):
        self.writes = []
        self.copies = []
        self.release = []
        self.locking = locking
        self.held = {}

    def hold(self, page):
        if self.locking and page.index not in self.held:
            page.lock.acquire()
            self.held[page.index] = page.lock

    def pages(self, page_bytes):
        out = set()
        for addr, data in self.writes:
            out.add(addr // page_bytes)
        for src, dst, n in self.copies:
            out.add(src // page_bytes)
            out.add(dst // page_bytes)
        return out

    def drop_locks(self):
        for lock in self.held.values():
            lock.release()
        self.held.clear()

    def clear(self):
        self.writes.clear()
        self.copies.clear()
        self.release.clear()


class Heap:
    def __init__(self, cfg: HeapConfig):
        self.cfg = cfg.validate()
        self.page_bytes = cfg.page_bytes
        self.block_sizes = cfg.block_sizes()
        self.min_block = self.block_sizes[0]
        self.header = layout.header_bytes(self.page_bytes, self.min_block)
        self.abstract = cfg.addressing_mode is AddressingMode.ABSTRACT
        self.iota = cfg.iota
        self.arena = bytearray(cfg.arena_bytes)
        self.mem = memoryview(self.arena)
        npages = cfg.arena_bytes // self.page_bytes
        self.pages = [Page(i, i * self.page_bytes) for i in range(npages)]
        self.free_pages = TwoLevelFreeList(
            PageStore(self.arena, self.page_bytes), cfg.spill_bound, range(npages))
        if self.abstract:
            nhandles = cfg.arena_bytes // self.min_block
            self.fwd = [-1] * nhandles
            self.cancel = bytearray(nhandles)
            self.free_handles = TwoLevelFreeList(NodeStore(), cfg.spill_bound, range(nhandles))
        else:
            self.fwd = None
            self.cancel = None
            self.free_handles = None
        self._usable = [layout.usable_bytes(b, self.abstract) for b in self.block_sizes]
        self._kappas = cfg.kappas()
        self.class_records = bytearray()
        self.class_sets = []
        self.classes = self.new_class_set()
        self._transient = 0
        self.transient_peak = 0
        self._transient_lock = threading.Lock()
        self.page_reuse_violations = 0
        self.pages_in_use = 0
        self._pend = Pending()

    # -- construction ----------------------------------------------------

    def new_class_set(self):
        """A fresh set of empty size-classes sharing this heap's pages and
        handles (one per thread in thread-local mode)."""
        set_id = len(self.class_sets)
        classes = []
        for i, beta in enumerate(self.block_sizes):
            offset = len(self.class_records)
            self.class_records.extend(bytes(CLASS_RECORD_BYTES))
            pi = layout.blocks_per_page(self.page_bytes, beta, self.min_block)
            cls = SizeClass(i, beta, pi, self._kappas[i], self.iota, self._usable[i], set_id, offset)
            struct.pack_into("<QQQ", self.class_records, offset, beta, pi, cls.kappa or 0)
            if cls.record_offset % CLASS_RECORD_BYTES:
                raise AssertionError("size-class record not 128B aligned")
            classes.append(cls)
        self.class_sets.append(classes)
        return classes

    @property
    def largest_usable(self):
        return self._usable[-1]

    def class_for_size(self, size, classes=None):
        if size <= 0 or size > self._usable[-1]:
            raise UnsupportedSize(f"no size-class for {size} bytes (max {self._usable[-1]})")
        i = bisect.bisect_left(self._usable, size)
        return (classes or self.classes)[i]

    # -- addresses -------------------------------------------------------

    def block_addr(self, page, idx):
        return page.base + self.header + idx * page.owner.beta

    def locate(self, addr):
        page = self.pages[addr // self.page_bytes]
        owner = page.owner
        if owner is None:
            raise ContractError(f"address {addr:#x} is not inside a page in use")
        off = addr - page.base - self.header
        idx, rem = divmod(off, owner.beta)
        if off < 0 or rem or idx >= owner.pi:
            raise ContractError(f"address {addr:#x} is not a block start")
        return page, idx

    def page_of_handle(self, handle):
        """Owning page by alignment arithmetic on the current address."""
        return self.pages[self.dereference(handle) // self.page_bytes]

    def _backlink(self, addr):
        return int.from_bytes(self.mem[addr:addr + 8], "little")

    def dereference(self, handle):
        if not self.abstract:
            return handle
        try:
            addr = self.fwd[handle]
        except (IndexError, TypeError):
            raise ContractError(f"invalid handle {handle!r}") from None
        if addr < 0:
            raise ContractError(f"dead handle {handle}")
        return addr

    def _payload_base(self, handle):
        addr = self.dereference(handle)
        return addr + layout.WORD if self.abstract else addr

    def read(self, handle, size=None):
        base = self._payload_base(handle)
        page, _ = self.locate(base - (layout.WORD if self.abstract else 0))
        n = page.owner.usable if size is None else size
        return bytes(self.mem[base:base + n])

    def write(self, handle, data, offset=0):
        base = self._payload_base(handle)
        page, _ = self.locate(base - (layout.WORD if self.abstract else 0))
        if offset + len(data) > page.owner.usable:
            raise ContractError("write past the end of the object")
        self.mem[base + offset:base + offset + len(data)] = data

    # -- transient fragmentation accounting -----------------------------

    def _attach_job(self, page, job):
        page.jobs.append(job)
        if len(page.jobs) == 1:
            with self._transient_lock:
                self._transient += 1
                if self._transient > self.transient_peak:
                    self.transient_peak = self._transient

    def _detach_job(self, page, job):
        page.jobs.remove(job)
        if not page.jobs:
            with self._transient_lock:
                self._transient -= 1

    @property
    def transient_pages(self):
        return self._transient

    # -- atomic units ----------------------------------------------------

    def _release_page(self, page, pend):
        self.pages_in_use -= 1
        page.owner = None
        page.state = FREE
        page.bitmap = 0
        page.used = 0
        page.source_mask = 0
        page.cblock.clear()
        pend.release.append(page.index)

    def _new_page(self, cls):
        idx = self.free_pages.pop()
        if idx is None:
            return None
        page = self.pages[idx]
        if page.state != FREE:
            self.page_reuse_violations += 1
        self.pages_in_use += 1
        page.owner = cls
        page.bitmap = 0
        page.used = 0
        page.state = NOT_FULL
        cls.notfull.append(page)
        return page

    def _check_input_state(self, cls):
        if cls.pending_target is not None:
            raise ContractError(f"{cls} needs a compaction step first")

    def _alloc(self, cls, pend, payload=b""):
        """Allocation bookkeeping; queues the object's initial bytes and
        returns ``(handle, address)``."""
        self._check_input_state(cls)
        handle = None
        if self.abstract:
            handle = self.free_handles.pop()
            if handle is None:
                raise OutOfMemory("no free handle")
        page = cls.notfull.tail
        if page is None:
            page = self._new_page(cls)
            if page is None:
                if handle is not None:
                    self.free_handles.push(handle)
                raise OutOfMemory(f"no free page for {cls}")
        bm = page.bitmap
        bit = ~bm & (bm + 1)
        page.bitmap = bm | bit
        page.used += 1
        if page.used == cls.pi:
            cls.notfull.remove(page)
            page.state = FULL
            cls.full.append(page)
        addr = page.base + self.header + (bit.bit_length() - 1) * cls.beta
        cls.h += 1
        cls.stats.allocs += 1
        if self.abstract:
            self.fwd[handle] = addr
            pend.writes.append((addr, handle.to_bytes(layout.WORD, "little") + bytes(payload)))
        else:
            handle = addr
            if payload:
                pend.writes.append((addr, bytes(payload)))
        if cls.log is not None:
            cls.log.append((("A",), self._log_state(cls)))
        return handle, addr

    def _resolve_block(self, handle, pend):
        """Page and block index accounting for ``handle``'s object, plus the
        in-flight job moving it (if any)."""
        addr = self.dereference(handle)
        page = self.pages[addr // self.page_bytes]
        cls = page.owner
        if cls is None or page.state == FREE:
            raise ContractError(f"handle {handle} points outside the heap")
        idx = (addr - page.base - self.header) // cls.beta
        if page.source_mask >> idx & 1:
            job = page.cblock[idx]
            tpage, tidx = self.locate(job.target)
            return tpage, tidx, job
        if not page.bitmap >> idx & 1:
            raise ContractError(f"handle {handle} points at a free block (double free?)")
        pend.hold(page)
        if self.abstract and self._backlink(addr) != handle:
            raise ContractError(f"backlink mismatch for handle {handle}")
        return page, idx, None

    def _where(self, cls, page):
        if page.state == SOURCE:
            return "src"
        if page.state == FULL:
            return "full"
        return ("nf", cls.notfull.index(page))

    def _dealloc(self, handle, pend, defer=False):
        """Deallocation bookkeeping.

        Returns the compaction job this caller must drive to completion, if
        one is in flight after the unit.
        """
        page, idx, moving = self._resolve_block(handle, pend)
        cls = page.owner
        self._check_input_state(cls)
        if cls.log is not None:
            where = self._where(cls, page)
        state = page.state
        page.bitmap &= ~(1 << idx)
        page.used -= 1
        cls.h -= 1
        cls.stats.deallocs += 1
        trigger = False
        if state == NOT_FULL:
            if page.used == 0:
                cls.notfull.remove(page)
                self._release_page(page, pend)
        elif state == FULL:
            cls.full.remove(page)
            if page.used == 0:
                self._release_page(page, pend)
            else:
                page.state = NOT_FULL
                cls.notfull.append(page)
                trigger = cls.kappa is not None and cls.notfull.size > cls.kappa
        elif state == SOURCE:
            if page.used == 0:
                cls.source = None
                self._retire_source(cls, page, pend)
        else:
            raise ContractError(f"deallocation in a {state} page")
        if moving is not None:
            cls.stats.dealloc_conflicts += 1
            self._cancel(moving, pend)
            self.fwd[handle] = -1
            self.cancel[handle] = 1  # the job's owner releases the handle
            moving.owns_handle = True
        elif self.abstract:
            self.fwd[handle] = -1
            self.free_handles.push(handle)
        if cls.log is not None:
            cls.log.append((("D", where, moving.id if moving else None), self._log_state(cls)))
        if not trigger:
            return None
        if defer:
            cls.pending_target = page
            return None
        if cls.incremental:
            return self._begin(cls, page, pend)
        self._compact(cls, page, pend)
        return None

    def _retire_source(self, cls, page, pend):
        if page.jobs:
            page.state = EMPTYING
            cls.emptying.add(page)
        else:
            self._release_page(page, pend)

    def _convert_source(self, cls, page):
        if cls.source is page and not page.jobs and cls.notfull.size < cls.kappa:
            cls.source = None
            page.state = NOT_FULL
            cls.notfull.append(page)

    def _cancel(self, job, pend):
        job.canceled = True
        spage, sidx = self.locate(job.source)
        tpage = self.pages[job.target // self.page_bytes]
        tidx = (job.target - tpage.base - self.header) // job.cls.beta
        spage.source_mask &= ~(1 << sidx)
        spage.cblock.pop(sidx, None)
        tpage.cblock.pop(tidx, None)
        self._detach_job(spage, job)
        cls = job.cls
        if spage.state == SOURCE:
            self._convert_source(cls, spage)
        elif spage.state == EMPTYING and not spage.jobs:
            cls.emptying.discard(spage)
            self._release_page(spage, pend)

    def _record_copy(self, cls, nbytes):
        st = cls.stats
        st.copy_steps += 1
        st.bytes_copied += nbytes
        if nbytes > st.max_step_bytes:
            st.max_step_bytes = nbytes

    def _compact(self, cls, target_page, pend):
        """Move one object from the first not-full page into the single free
        block of ``target_page``."""
        nf = cls.notfull
        if cls.kappa is None or nf.size != cls.kappa + 1 or nf.tail is not target_page:
            raise ContractError(f"{cls} is not in a compaction state")
        tbm = target_page.bitmap
        tbit = ~tbm & (tbm + 1)
        target_page.bitmap = tbm | tbit
        target_page.used += 1
        nf.remove(target_page)
        target_page.state = FULL
        cls.full.append(target_page)
        dst = target_page.base + self.header + (tbit.bit_length() - 1) * cls.beta
        src_page = nf.head
        sidx = src_page.bitmap.bit_length() - 1
        src_page.bitmap &= ~(1 << sidx)
        src_page.used -= 1
        src = src_page.base + self.header + sidx * cls.beta
        pend.hold(src_page)
        handle = self._backlink(src)
        self.fwd[handle] = dst
        pend.copies.append((src, dst, cls.beta))
        self._record_copy(cls, cls.beta)
        cls.stats.compactions += 1
        if src_page.used == 0:
            nf.remove(src_page)
            self._release_page(src_page, pend)
        if cls.log is not None:
            cls.log.append((("C",), self._log_state(cls)))

    def _begin(self, cls, target_page, pend):
        """Initial incremental compaction step; returns the new job if the
        move needs further steps."""
        nf = cls.notfull
        if cls.kappa is None or nf.size != cls.kappa + 1 or nf.tail is not target_page:
            raise ContractError(f"{cls} is not in a compaction state")
        cls.stats.compactions += 1
        src_page = cls.source
        if src_page is None:
            src_page = nf.popleft()
            src_page.state = SOURCE
            cls.source = src_page
            if cls.log is not None:
                cls.log.append((("I", None, None), self._log_state(cls)))
            return None
        tbm = target_page.bitmap
        tbit = ~tbm & (tbm + 1)
        tidx = tbit.bit_length() - 1
        target_page.bitmap = tbm | tbit
        target_page.used += 1
        nf.remove(target_page)
        target_page.state = FULL
        cls.full.append(target_page)
        tb = target_page.base + self.header + tidx * cls.beta
        pidx = src_page.bitmap.bit_length() - 1
        src_page.bitmap &= ~(1 << pidx)
        src_page.used -= 1
        pb = src_page.base + self.header + pidx * cls.beta
        first = min(cls.iota, cls.beta)
        old = src_page.cblock.pop(pidx, None)
        job = None
        replaced = None
        if old is not None:
            # pb is the target of a move out of an emptying page: restart
            # that move from its source into tb, abandoning the copy in pb
            cls.stats.compaction_conflicts += 1
            replaced = old.id
            old.canceled = True
            epage, eidx = self.locate(old.source)
            job = CompactionJob(cls, old.source, tb, old.handle)
            epage.jobs[epage.jobs.index(old)] = job
            epage.cblock[eidx] = job
            target_page.cblock[tidx] = job
            pend.writes.append((tb, job.handle.to_bytes(layout.WORD, "little")))
            pend.copies.append((job.source, tb, first))
            self._record_copy(cls, first)
            job.moved = first
            if first == cls.beta:
                self._complete(job, pend)
        else:
            pend.hold(src_page)
            handle = self._backlink(pb)
            pend.copies.append((pb, tb, first))
            self._record_copy(cls, first)
            if first == cls.beta:
                self.fwd[handle] = tb
            else:
                job = CompactionJob(cls, pb, tb, handle, moved=first)
                src_page.source_mask |= 1 << pidx
                src_page.cblock[pidx] = job
                target_page.cblock[tidx] = job
                self._attach_job(src_page, job)
                pend.writes.append((tb, handle.to_bytes(layout.WORD, "little")))
        if src_page.used == 0:
            cls.source = None
            self._retire_source(cls, src_page, pend)
        if cls.log is not None:
            new_id = job.id if job is not None and job.moved < cls.beta else None
            cls.log.append((("I", new_id, replaced), self._log_state(cls)))
        if job is None or job.done:
            return None
        return job

    def _complete(self, job, pend):
        cls = job.cls
        spage, sidx = self.locate(job.source)
        tpage = self.pages[job.target // self.page_bytes]
        tidx = (job.target - tpage.base - self.header) // cls.beta
        spage.source_mask &= ~(1 << sidx)
        spage.cblock.pop(sidx, None)
        tpage.cblock.pop(tidx, None)
        self.fwd[job.handle] = job.target
        job.done = True
        self._detach_job(spage, job)
        if spage.state == SOURCE:
            self._convert_source(cls, spage)
        elif spage.state == EMPTYING and not spage.jobs:
            cls.emptying.discard(spage)
            self._release_page(spage, pend)

    def _step(self, job, pend):
        if job.torn_down or job.done:
            raise ContractError(f"job {job.id} already finished")
        if job.canceled:
            job.torn_down = True
            if job.owns_handle:
                self.cancel[job.handle] = 0
                self.free_handles.push(job.handle)
            return StepOutcome.CANCELED
        cls = job.cls
        spage = self.pages[job.source // self.page_bytes]
        in_pool = spage.state == EMPTYING
        chunk = min(cls.iota, cls.beta - job.moved)
        pend.copies.append((job.source + job.moved, job.target + job.moved, chunk))
        self._record_copy(cls, chunk)
        job.moved += chunk
        outcome = StepOutcome.PROGRESS
        if job.moved == cls.beta:
            self._complete(job, pend)
            outcome = StepOutcome.DONE
        if cls.log is not None:
            cls.log.append((("IE" if in_pool else "Ij", job.id), self._log_state(cls)))
        return outcome

    def _boundary(self, cls):
        """Record the not-full page count at an operation boundary."""
        n = cls.notfull.size
        st = cls.stats
        if n > st.max_notfull:
            st.max_notfull = n
        if cls.kappa is not None and n > cls.kappa and cls.pending_target is None:
            st.kappa_violations += 1

    def _compact_pending(self, cls, pend):
        page = cls.pending_target
        if page is None:
            raise ContractError(f"{cls} is not in a compaction state")
        cls.pending_target = None
        if cls.incremental:
            return self._begin(cls, page, pend)
        self._compact(cls, page, pend)
        return None

    def _finish(self, pend):
        mem = self.mem
        for addr, data in pend.writes:
            mem[addr:addr + len(data)] = data
        pend.writes.clear()
        for src, dst, n in pend.copies:
            mem[dst:dst + n] = mem[src:src + n]
        pend.copies.clear()
        for idx in pend.release:
            self.free_pages.push(idx)
        pend.release.clear()

    # -- single-threaded public API --------------------------------------

    def allocate(self, size, payload=b"", classes=None):
        if len(payload) > size:
            raise ContractError("payload longer than the requested size")
        cls = self.class_for_size(size, classes)
        handle, _ = self._alloc(cls, self._pend, payload)
        self._finish(self._pend)
        self._boundary(cls)
        return handle

    def deallocate(self, handle, defer_compaction=False, drive=True):
        """Free ``handle``.  A triggered compaction runs before returning
        unless ``defer_compaction`` leaves the class in its compaction state
        or ``drive=False`` hands back the in-flight job."""
        pend = self._pend
        cls = self.pages[self.dereference(handle) // self.page_bytes].owner
        job = self._dealloc(handle, pend, defer=defer_compaction)
        self._finish(pend)
        if cls is not None:
            self._boundary(cls)
        if job is not None and drive:
            self.drive_to_completion(job)
            return None
        return job

    def compact_once(self, cls):
        """Run the compaction step a deferred deallocation left due."""
        pend = self._pend
        job = self._compact_pending(cls, pend)
        self._finish(pend)
        self._boundary(cls)
        return job

    def step(self, job):
        pend = self._pend
        out = self._step(job, pend)
        self._finish(pend)
        self._boundary(job.cls)
        return out

    def drive_to_completion(self, job):
        out = StepOutcome.PROGRESS
        while out is StepOutcome.PROGRESS:
            out = self.step(job)
        return out

    # -- views -----------------------------------------------------------

    def _log_state(self, cls):
        u = tuple(p.used for p in cls.notfull)
        if not cls.incremental:
            return (cls.h, u)
        src = cls.source
        if src is None:
            return (cls.h, u, 0, ())
        return (cls.h, u, src.used, tuple(j.moved for j in src.jobs))

    def project_state(self, cls):
        """Class state recomputed from the page bitmaps."""
        u = tuple(p.bitmap.bit_count() for p in cls.notfull)
        h = sum(u) + sum(p.bitmap.bit_count() for p in cls.full)
        if not cls.incremental:
            return AutomatonState(h, u)
        src = cls.source
        if src is None:
            return IncrementalClassState(h, u)
        us = src.bitmap.bit_count()
        return IncrementalClassState(h + us, u, us, tuple(j.moved for j in src.jobs))

    def fragmentation_report(self):
        rows = []
        for classes in self.class_sets:
            for cls in classes:
                u = [p.bitmap.bit_count() for p in cls.notfull]
                rows.append({
                    "set": cls.owner_set,
                    "beta": cls.beta,
                    "pi": cls.pi,
                    "kappa": cls.kappa,
                    "pages_used": len(cls.full) + len(u) + (cls.source is not None) + len(cls.emptying),
                    "notfull_count": len(u),
                    "F": len(u) * cls.pi - sum(u),
                    "source_pages": int(cls.source is not None),
                    "emptying_pages": len(cls.emptying),
                })
        totals = {
            "pages_used": sum(r["pages_used"] for r in rows),
            "notfull_count": sum(r["notfull_count"] for r in rows),
            "F": sum(r["F"] for r in rows),
            "source_pages": sum(r["source_pages"] for r in rows),
            "emptying_pages": sum(r["emptying_pages"] for r in rows),
            "free_pages": sum(1 for p in self.pages if p.state == FREE),
        }
        return {"classes": rows, "totals": totals}

    def live_objects(self):
        return sum(c.h for classes in self.class_sets for c in classes)

    def stats(self):
        total = ClassStats()
        for classes in self.class_sets:
            for cls in classes:
                st = cls.stats
                total.allocs += st.allocs
                total.deallocs += st.deallocs
                total.compactions += st.compactions
                total.copy_steps += st.copy_steps
                total.bytes_copied += st.bytes_copied
                total.max_step_bytes = max(total.max_step_bytes, st.max_step_bytes)
                total.dealloc_conflicts += st.dealloc_conflicts
                total.compaction_conflicts += st.compaction_conflicts
                total.kappa_violations += st.kappa_violations
                total.max_notfull = max(total.max_notfull, st.max_notfull)
        return total

    def audit(self):
        """Cross-check every page against its class lists; returns a list of
        problems (empty when consistent)."""
        problems = []
        seen = {}
        for classes in self.class_sets:
            for cls in classes:
                groups = [(NOT_FULL, list(cls.notfull)), (FULL, list(cls.full)),
                          (EMPTYING, list(cls.emptying))]
                if cls.source is not None:
                    groups.append((SOURCE, [cls.source]))
                h = 0
                for state, pages in groups:
                    for p in pages:
                        if p.index in seen:
                            problems.append(f"{p} listed twice")
                        seen[p.index] = cls
                        used = p.bitmap.bit_count()
                        h += used
                        if p.owner is not cls or p.state != state:
                            problems.append(f"{p} owner/state mismatch in {cls}")
                        if used != p.used:
                            problems.append(f"{p} used_count {p.used} != popcount {used}")
                        if state == NOT_FULL and not 0 < used < cls.pi:
                            problems.append(f"{p} on not-full list with {used} used")
                        if state == FULL and used != cls.pi:
                            problems.append(f"{p} on full list with {used} used")
                        if state == SOURCE and used == 0:
                            problems.append(f"source {p} has no used block")
                        if state == EMPTYING and (used or not p.jobs):
                            problems.append(f"emptying {p} has used blocks or no moves")
                        if bin(p.source_mask).count("1") != len(p.jobs):
                            problems.append(f"{p} source blocks disagree with its jobs")
                if h != cls.h:
                    problems.append(f"{cls} h counter {cls.h} != scanned {h}")
                if cls.kappa is not None and cls.pending_target is None and cls.notfull.size > cls.kappa:
                    problems.append(f"{cls} has {cls.notfull.size} not-full pages")
        for p in self.pages:
            if p.index not in seen and p.state != FREE:
                problems.append(f"{p} in use but on no list")
        if self.abstract:
            live = sum(1 for a in self.fwd if a >= 0)
            if live != self.live_objects():
                problems.append(f"{live} live handles but {self.live_objects()} used blocks")
        return problems
