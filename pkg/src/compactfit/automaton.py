"""Reference model of one size-class as a deterministic automaton.

A state is the pair ``(h, u)``: ``h`` counts allocated page-blocks of the
class, ``u`` lists the used-block counts of the not-full pages in list order
(``n = len(u)``).  The heap keeps its not-full pages in the same order, so a
projected heap state can be compared to the model position by position.

Page selectors for deallocation are 0-based indices into ``u`` or the
``FULL_PAGE`` token; all full pages are interchangeable here.

Complete transition table (``k`` = kappa, ``p`` = pi)::

    A    n = 0, p = 1            h+1                     (page opened and filled)
    A    n = 0, p > 1            h+1, u = [1]
    A    0 < n <= k, u_n < p-1   h+1, u_n+1
    A    0 < n <= k, u_n = p-1   h+1, drop u_n           (page became full)
    D_i  i < n <= k, u_i > 1     h-1, u_i-1
    D_i  i < n <= k, u_i = 1     h-1, drop u_i           (page emptied, shift left)
    D_F  n <= k, p = 1           h-1                     (page emptied)
    D_F  n <= k, p > 1           h-1, append p-1         (n = k gives COMPACTION)
    C    n = k+1, u_1 > 1        u_1-1, drop u_{k+1}
    C    n = k+1, u_1 = 1        drop u_1 and u_{k+1}

No other step is enabled; ``A`` and ``D`` are rejected in COMPACTION states
and ``C`` everywhere else.
"""

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

from .errors import ContractError


class StateClass(enum.Enum):
    EMPTY = "EMPTY"
    NOT_FULL = "NOT_FULL"
    FULL = "FULL"
    COMPACTION = "COMPACTION"


class _FullPage:
    __slots__ = ()

    def __repr__(self):
        return "FULL_PAGE"


FULL_PAGE = _FullPage()


@dataclass(frozen=True)
class AutomatonConfig:
    pi: int
    kappa: Optional[int] = None  # None means unbounded

    def __post_init__(self):
        if self.pi < 1:
            raise ContractError(f"pi must be >= 1, got {self.pi}")
        if self.kappa is not None and self.kappa < 1:
            raise ContractError(f"kappa must be >= 1 or unbounded, got {self.kappa}")


@dataclass(frozen=True)
class AutomatonState:
    h: int = 0
    u: Tuple[int, ...] = ()

    @property
    def n(self):
        return len(self.u)

    def validate(self, cfg, strict=False):
        """Check the state against ``cfg``.

        The transitions only need ``h >= sum(u)``.  With ``strict`` the
        blocks outside the not-full pages must also fill whole pages, which
        holds for every state reachable from EMPTY.
        """
        if self.h < 0:
            raise ContractError(f"negative heap size in {self}")
        for x in self.u:
            if not 1 <= x <= cfg.pi - 1:
                raise ContractError(f"not-full entry {x} outside 1..{cfg.pi - 1} in {self}")
        rest = self.h - sum(self.u)
        if rest < 0:
            raise ContractError(f"more used blocks in not-full pages than h in {self}")
        if strict and rest % cfg.pi:
            raise ContractError(f"blocks outside not-full pages do not fill whole pages in {self}")
        if cfg.kappa is not None and self.n > cfg.kappa + 1:
            raise ContractError(f"more than kappa+1 not-full pages in {self}")
        return self

    def full_pages(self, cfg):
        return -(-(self.h - sum(self.u)) // cfg.pi)

    def fragmentation(self, cfg):
        return self.n * cfg.pi - sum(self.u)

    def multiset(self):
        """Order-free view, for comparisons that ignore page positions."""
        return AutomatonState(self.h, tuple(sorted(self.u)))

    def __str__(self):
        return f"<{self.h}, {list(self.u)}>"


def classify(state, cfg):
    state.validate(cfg)
    if state.h == 0:
        return StateClass.EMPTY
    if cfg.kappa is not None and state.n == cfg.kappa + 1:
        return StateClass.COMPACTION
    if state.n == 0:
        return StateClass.FULL
    return StateClass.NOT_FULL


def _require_input_state(state, cfg, what):
    if classify(state, cfg) is StateClass.COMPACTION:
        raise ContractError(f"{what} in compaction state {state}; compaction step is due")


def step_alloc(state, cfg):
    _require_input_state(state, cfg, "allocation")
    h, u = state.h, state.u
    if not u:
        return AutomatonState(h + 1, () if cfg.pi == 1 else (1,))
    last = u[-1]
    if last < cfg.pi - 1:
        return AutomatonState(h + 1, u[:-1] + (last + 1,))
    return AutomatonState(h + 1, u[:-1])


def step_dealloc(state, cfg, page_selector):
    if state.h <= 0:
        raise ContractError("deallocation in an empty size-class")
    _require_input_state(state, cfg, "deallocation")
    h, u = state.h, state.u
    if page_selector is FULL_PAGE:
        if h - sum(u) <= 0:
            raise ContractError(f"no full page to deallocate from in {state}")
        if cfg.pi == 1:
            return AutomatonState(h - 1, u)
        return AutomatonState(h - 1, u + (cfg.pi - 1,))
    i = page_selector
    if not isinstance(i, int) or not 0 <= i < len(u):
        raise ContractError(f"no not-full page {page_selector!r} in {state}")
    if u[i] > 1:
        return AutomatonState(h - 1, u[:i] + (u[i] - 1,) + u[i + 1:])
    return AutomatonState(h - 1, u[:i] + u[i + 1:])


def step_compact(state, cfg):
    if classify(state, cfg) is not StateClass.COMPACTION:
        raise ContractError(f"compaction outside a compaction state: {state}")
    u = state.u
    if u[0] > 1:
        return AutomatonState(state.h, (u[0] - 1,) + u[1:-1])
    return AutomatonState(state.h, u[1:-1])


def dealloc_selectors(state, cfg):
    """Every page selector ``step_dealloc`` accepts in ``state``."""
    selectors = list(range(state.n))
    if state.h - sum(state.u) > 0:
        selectors.append(FULL_PAGE)
    return selectors


def after_allocs(h, cfg):
    """State reached from EMPTY by ``h`` allocations."""
    if cfg.pi == 1 or h % cfg.pi == 0:
        return AutomatonState(h, ())
    return AutomatonState(h, (h % cfg.pi,))
