"""Two-level free lists for pages and handles.

Every thread owns a private LIFO list that it touches without any
synchronisation.  Surplus elements are published to a shared public list
of sublists whose head is the pair ``(version, first)``.  Both fields change
together and the version grows on every change, so a thread that read an
old head can never mistake a recycled sublist for the one it saw (ABA).

CPython offers no double-word compare-and-swap; ``_cas`` emulates one with a
tiny lock that guards only the comparison and the swap.
"""

import threading
from dataclasses import dataclass
from typing import Any

DEFAULT_SPILL_BOUND = 64


@dataclass(frozen=True)
class PublicHead:
    version: int
    first: Any  # sublist reference or None


class NodeStore:
    """Sublists linked through auxiliary two-word nodes (free handles)."""

    class Node:
        __slots__ = ("next", "items")

        def __init__(self, next_, items):
            self.next = next_
            self.items = items

    def make(self, items, next_ref):
        return self.Node(next_ref, list(items))

    def next_of(self, ref):
        return ref.next

    def take(self, ref):
        return ref.items


class PageStore:
    """Sublists of free pages linked through the pages' own first words.

    A sublist reference is the index of its first page.  Word 0 of each page
    holds the next page of the same sublist (-1 ends it), word 1 of the first
    page holds the next sublist.
    """

    def __init__(self, arena, page_bytes):
        self._arena = arena
        self._page_bytes = page_bytes

    def _get(self, page, word):
        off = page * self._page_bytes + 8 * word
        return int.from_bytes(self._arena[off:off + 8], "little", signed=True)

    def _put(self, page, word, value):
        off = page * self._page_bytes + 8 * word
        self._arena[off:off + 8] = value.to_bytes(8, "little", signed=True)

    def make(self, items, next_ref):
        items = list(items)
        for a, b in zip(items, items[1:]):
            self._put(a, 0, b)
        self._put(items[-1], 0, -1)
        self._put(items[0], 1, -1 if next_ref is None else next_ref)
        return items[0]

    def next_of(self, ref):
        nxt = self._get(ref, 1)
        return None if nxt < 0 else nxt

    def take(self, ref):
        items = []
        page = ref
        while page >= 0:
            items.append(page)
            page = self._get(page, 0)
        return items


class TwoLevelFreeList:
    def __init__(self, store=None, spill_bound=DEFAULT_SPILL_BOUND, items=()):
        if spill_bound < 1:
            raise ValueError("spill bound must be positive")
        self.store = store if store is not None else NodeStore()
        self.spill_bound = spill_bound
        self._head = PublicHead(0, None)
        self._head_lock = threading.Lock()
        self._local = threading.local()
        self._adopted = None  # head versions detached, when auditing
        items = list(items)
        # LIFO: the first element of ``items`` is handed out first
        chunks = [items[i:i + spill_bound] for i in range(0, len(items), spill_bound)]
        for chunk in reversed(chunks):
            self._publish(list(reversed(chunk)))

    # -- private level ---------------------------------------------------

    def _private(self):
        lst = getattr(self._local, "items", None)
        if lst is None:
            lst = self._local.items = []
        return lst

    def pop(self):
        """Next free element, or None when both levels are exhausted."""
        lst = self._private()
        if lst:
            return lst.pop()
        adopted = self._adopt()
        if adopted is None:
            return None
        lst.extend(adopted)
        return lst.pop()

    def push(self, element):
        lst = self._private()
        lst.append(element)
        if len(lst) > self.spill_bound:
            chunk = lst[:self.spill_bound]
            del lst[:self.spill_bound]
            self._publish(chunk)

    # -- public level ----------------------------------------------------

    @property
    def head(self):
        return self._head

    def _cas(self, expected, new):
        with self._head_lock:
            if self._head is not expected:
                return False
            self._head = new
            return True

    def _publish(self, items):
        while True:
            old = self._head
            ref = self.store.make(items, old.first)
            if self._cas(old, PublicHead(old.version + 1, ref)):
                return

    def _adopt(self):
        while True:
            old = self._head
            if old.first is None:
                return None
            new = PublicHead(old.version + 1, self.store.next_of(old.first))
            if self._cas(old, new):
                if self._adopted is not None:
                    self._adopted.append(old.version)
                return self.store.take(old.first)

    def audit(self, enabled=True):
        """Start recording adoptions to detect double issue of a sublist."""
        self._adopted = [] if enabled else None

    @property
    def adoptions(self):
        return 0 if self._adopted is None else len(self._adopted)

    @property
    def double_adoptions(self):
        """Sublists handed to more than one adopter; each head version can
        be detached at most once."""
        if self._adopted is None:
            return 0
        return len(self._adopted) - len(set(self._adopted))

    def private_len(self):
        return len(self._private())

    def public_sublists(self):
        n = 0
        ref = self._head.first
        while ref is not None:
            n += 1
            ref = self.store.next_of(ref)
        return n
