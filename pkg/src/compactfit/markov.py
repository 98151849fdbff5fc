"""Exact reachability analysis of one size-class under ``A^h D^d``.

After ``h`` allocations the mutator frees blocks uniformly at random: a
deallocation hits not-full page ``i`` with probability ``u_i/h`` and some
full page with probability ``(h - sum(u))/h``.  Compaction steps are
outputs of the allocator and happen with probability 1; they consume no
deallocation budget.

Every deallocation from a state with ``h`` live blocks divides by ``h``, so
after ``k`` deallocations all path probabilities share the denominator
``H * (H-1) * ... * (H-k+1)``.  ``reach_curve`` exploits that: it carries
integer numerators level by level and only forms ``Fraction`` objects for
the results, which keeps exact arithmetic cheap.

Two state encodings are supported.  ``SEQUENCE`` keeps the not-full pages
in list order, exactly like the automaton.  ``MULTISET`` sorts them, which
merges states with equal deallocation behaviour; compaction then takes its
source from the smallest entry.  Up to the first compaction both encodings
give identical probabilities, so ``MULTISET`` is exact for the
``COMPACTION`` target but not for targets observed after a compaction.
"""

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from .automaton import AutomatonConfig, AutomatonState, after_allocs
from .errors import ContractError, ResourceError

DEFAULT_STATE_BUDGET = 5_000_000
CSV_VERSION = "# compactfit-analyze v1"
CSV_FIELDS = ["h", "pi", "kappa", "d", "target", "probability_num", "probability_den", "states", "transitions"]


class TargetPredicate(enum.Enum):
    COMPACTION = "compaction"
    WORST_FRAG = "worst-frag"

    def holds(self, state, cfg):
        if self is TargetPredicate.COMPACTION:
            return state.n == cfg.kappa + 1
        # worst-case fragmentation is a property of input states
        return state.n <= cfg.kappa and state.n * cfg.pi - sum(state.u) == cfg.kappa * (cfg.pi - 1)


class Encoding(enum.Enum):
    MULTISET = "multiset"
    SEQUENCE = "sequence"


def default_encoding(target):
    return Encoding.MULTISET if target is TargetPredicate.COMPACTION else Encoding.SEQUENCE


@dataclass(frozen=True)
class MutatorWord:
    h: int
    d: int

    def __post_init__(self):
        if self.h < 0 or self.d < 0:
            raise ContractError("mutator counts must be non-negative")
        if self.d > self.h:
            raise ContractError(f"cannot deallocate {self.d} of {self.h} blocks")


def _check_cfg(cfg):
    if cfg.kappa is None:
        raise ContractError("the analysis needs a finite kappa")


def _compact(h, u):
    if u[0] > 1:
        return (u[0] - 1,) + u[1:-1]
    return u[1:-1]


def _dealloc_counts(h, u, pi):
    """Successor page lists of a deallocation with their block counts
    (the numerators over ``h``), equal outcomes merged."""
    out = {}
    for i, x in enumerate(u):
        v = u[:i] + (x - 1,) + u[i + 1:] if x > 1 else u[:i] + u[i + 1:]
        out[v] = out.get(v, 0) + x
    full = h - sum(u)
    if full > 0:
        v = u if pi == 1 else u + (pi - 1,)
        out[v] = out.get(v, 0) + full
    return out


def dealloc_distribution(state, cfg, encoding=Encoding.SEQUENCE):
    """Successor states of a random deallocation with exact probabilities."""
    _check_cfg(cfg)
    if state.h <= 0:
        raise ContractError("deallocation in an empty size-class")
    if state.n > cfg.kappa:
        raise ContractError(f"{state} is not an input state")
    canon = encoding is Encoding.MULTISET
    out = {}
    for v, count in _dealloc_counts(state.h, state.u, cfg.pi).items():
        if canon:
            v = tuple(sorted(v))
        out[v] = out.get(v, 0) + count
    return [(AutomatonState(state.h - 1, v), Fraction(c, state.h)) for v, c in out.items()]


def _initial(mutator, cfg):
    s = after_allocs(mutator.h, cfg)
    return s.u


def _expand(h, u, cfg, canon):
    """Outgoing edges of node ``(h, u)`` as ``(next_h, next_u, numerator,
    denominator)``."""
    if len(u) == cfg.kappa + 1:
        v = _compact(h, u)
        return [(h, tuple(sorted(v)) if canon else v, 1, 1)]
    if h == 0:
        return []
    merged = {}
    for v, c in _dealloc_counts(h, u, cfg.pi).items():
        if canon:
            v = tuple(sorted(v))
        merged[v] = merged.get(v, 0) + c
    return [(h - 1, v, c, h) for v, c in merged.items()]


@dataclass
class DtmcModel:
    cfg: AutomatonConfig
    mutator: MutatorWord
    encoding: Encoding
    states: List[AutomatonState] = field(default_factory=list)
    edges: List[List[Tuple[int, Fraction]]] = field(default_factory=list)
    index: Dict[AutomatonState, int] = field(default_factory=dict)
    initial: int = 0

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_transitions(self):
        return sum(len(e) for e in self.edges)

    def steps_consumed(self, i):
        return self.mutator.h - self.states[i].h

    def _add(self, state):
        i = self.index.get(state)
        if i is None:
            i = self.index[state] = len(self.states)
            self.states.append(state)
            self.edges.append([])
        return i


def build_dtmc(cfg, mutator, encoding=Encoding.MULTISET, state_budget=DEFAULT_STATE_BUDGET):
    """Explicit chain of all nodes reachable within ``mutator.d``
    deallocations.  Nodes on the horizon keep no outgoing deallocation
    edges; a compaction due there still happens."""
    _check_cfg(cfg)
    canon = encoding is Encoding.MULTISET
    model = DtmcModel(cfg, mutator, encoding)
    u0 = _initial(mutator, cfg)
    model.initial = model._add(AutomatonState(mutator.h, tuple(sorted(u0)) if canon else u0))
    floor = mutator.h - mutator.d
    i = 0
    while i < len(model.states):
        s = model.states[i]
        if s.n == cfg.kappa + 1 or s.h > floor:
            for h, v, num, den in _expand(s.h, s.u, cfg, canon):
                j = model._add(AutomatonState(h, v))
                model.edges[i].append((j, Fraction(num, den)))
        if len(model.states) > state_budget:
            raise ResourceError(f"state budget {state_budget} exceeded", len(model.states), model.n_transitions)
        i += 1
    return model


def reach_probability(model, target):
    """Probability of hitting a ``target`` node, absorbing at the first hit."""
    cfg = model.cfg
    compacting = cfg.kappa + 1
    order = sorted(range(model.n_states),
                   key=lambda i: (model.steps_consumed(i), model.states[i].n != compacting))
    mass = [Fraction(0)] * model.n_states
    mass[model.initial] = Fraction(1)
    hit = Fraction(0)
    for i in order:
        m = mass[i]
        if not m:
            continue
        if target.holds(model.states[i], cfg):
            hit += m
            continue
        for j, p in model.edges[i]:
            mass[j] += m * p
    return hit


@dataclass
class CountResult:
    states: int
    transitions: int
    encoding: Encoding


def count_states(cfg, mutator, encoding, state_budget=DEFAULT_STATE_BUDGET):
    """Node and edge counts of ``build_dtmc`` without storing the chain."""
    _check_cfg(cfg)
    canon = encoding is Encoding.MULTISET
    u0 = _initial(mutator, cfg)
    level = {tuple(sorted(u0)) if canon else u0}
    h = mutator.h
    floor = mutator.h - mutator.d
    states = transitions = 0
    while level:
        # compaction nodes resolve inside the level
        compacted = set()
        for u in level:
            if len(u) == cfg.kappa + 1:
                v = _compact(h, u)
                compacted.add(tuple(sorted(v)) if canon else v)
                transitions += 1
        level |= compacted
        states += len(level)
        if states > state_budget:
            raise ResourceError(f"state budget {state_budget} exceeded", states, transitions)
        if h <= floor or h == 0:
            break
        nxt = set()
        for u in level:
            if len(u) == cfg.kappa + 1:
                continue
            succ = _expand(h, u, cfg, canon)
            transitions += len(succ)
            nxt.update(v for _, v, _, _ in succ)
        level = nxt
        h -= 1
    return CountResult(states, transitions, encoding)


def reach_curve(cfg, h, d_max, target, encoding=None, state_budget=DEFAULT_STATE_BUDGET):
    """Exact ``P(target within d deallocations)`` for every ``d`` in
    ``0..d_max``, computed in one forward pass."""
    _check_cfg(cfg)
    mutator = MutatorWord(h, d_max)
    if encoding is None:
        encoding = default_encoding(target)
    canon = encoding is Encoding.MULTISET
    u0 = _initial(mutator, cfg)
    level = {tuple(sorted(u0)) if canon else u0: 1}
    denom = 1
    hits = 0  # numerator over ``denom``
    curve = []
    cur_h = h
    for d in range(d_max + 1):
        # mandatory compactions first, then test the target
        resolved = {}
        for u, w in level.items():
            if len(u) == cfg.kappa + 1:
                if target is TargetPredicate.COMPACTION:
                    hits += w
                    continue
                v = _compact(cur_h, u)
                u = tuple(sorted(v)) if canon else v
            resolved[u] = resolved.get(u, 0) + w
        live = {}
        for u, w in resolved.items():
            if target.holds(AutomatonState(cur_h, u), cfg):
                hits += w
            else:
                live[u] = w
        curve.append(Fraction(hits, denom))
        if len(live) > state_budget:
            raise ResourceError(f"state budget {state_budget} exceeded", len(live), 0)
        if d == d_max or cur_h == 0:
            curve.extend([curve[-1]] * (d_max - d))
            break
        nxt = {}
        for u, w in live.items():
            for v, c in _dealloc_counts(cur_h, u, cfg.pi).items():
                if canon:
                    v = tuple(sorted(v))
                nxt[v] = nxt.get(v, 0) + w * c
        hits *= cur_h
        denom *= cur_h
        level = nxt
        cur_h -= 1
    return curve


# -- Monte Carlo oracle ------------------------------------------------------


@dataclass
class MonteCarloResult:
    hits: int
    trials: int

    @property
    def estimate(self):
        return self.hits / self.trials

    @property
    def stderr(self):
        p = self.estimate
        return math.sqrt(max(p * (1 - p), 0.0) / self.trials)

    def agrees(self, exact, sigmas=4.0):
        p = float(exact)
        # an exact 0 or 1 admits no sampling error at all
        if p in (0.0, 1.0):
            return self.estimate == p
        se = math.sqrt(p * (1 - p) / self.trials)
        return abs(self.estimate - p) <= sigmas * se


def monte_carlo(cfg, mutator, target, trials=1_000_000, seed=0):
    """Simulate the automaton on random deallocation sequences (vectorised).

    Pages are kept positionally in a ``(trials, kappa+1)`` array; the
    simulation shares no code with the exact analysis.
    """
    import numpy as np

    _check_cfg(cfg)
    rng = np.random.default_rng(seed)
    pi, kappa = cfg.pi, cfg.kappa
    width = kappa + 1
    u = np.zeros((trials, width), dtype=np.int64)
    n = np.zeros(trials, dtype=np.int64)
    if pi > 1 and mutator.h % pi:
        u[:, 0] = mutator.h % pi
        n[:] = 1
    h = mutator.h
    alive = np.ones(trials, dtype=bool)
    hit = np.zeros(trials, dtype=bool)
    cols = np.arange(width)

    def remove(rows, pos):
        # drop column ``pos`` in the selected rows, shifting the rest left
        take = np.minimum(cols[None, :] + (cols[None, :] >= pos[:, None]), width - 1)
        shifted = np.take_along_axis(u[rows], take, axis=1)
        shifted[:, -1] = 0
        u[rows] = shifted
        n[rows] -= 1

    def check():
        if target is TargetPredicate.COMPACTION:
            t = n == kappa + 1
        else:
            t = (n <= kappa) & (n * pi - u.sum(axis=1) == kappa * (pi - 1))
        newly = alive & t
        hit[newly] = True
        alive[newly] = False

    check()
    for _ in range(mutator.d):
        if h == 0 or not alive.any():
            break
        r = rng.integers(0, h, size=trials)
        csum = np.cumsum(u, axis=1)
        page = (r[:, None] >= csum).sum(axis=1)  # == n means a full page
        in_nf = alive & (page < n)
        in_full = alive & (page >= n)
        rows = np.nonzero(in_nf)[0]
        pos = page[rows]
        u[rows, pos] -= 1
        emptied = rows[u[rows, pos] == 0]
        if emptied.size:
            remove(emptied, page[emptied])
        if pi > 1:
            rows = np.nonzero(in_full)[0]
            u[rows, n[rows]] = pi - 1
            n[rows] += 1
        h -= 1
        check()
        # surviving compaction states take their mandatory step
        comp = np.nonzero(alive & (n == kappa + 1))[0]
        if comp.size:
            u[comp, kappa] = 0
            n[comp] -= 1
            u[comp, 0] -= 1
            emptied = comp[u[comp, 0] == 0]
            if emptied.size:
                remove(emptied, np.zeros(emptied.size, dtype=np.int64))
            check()
    return MonteCarloResult(int(hit.sum()), trials)


# -- sweeps ----------------------------------------------------------------


@dataclass
class SweepRow:
    h: int
    pi: int
    kappa: int
    d: int
    target: str
    probability: Optional[Fraction]
    states: int
    transitions: int
    error: str = ""

    def as_dict(self):
        p = self.probability
        return {
            "h": self.h, "pi": self.pi, "kappa": self.kappa, "d": self.d, "target": self.target,
            "probability_num": "" if p is None else p.numerator,
            "probability_den": "" if p is None else p.denominator,
            "states": self.states, "transitions": self.transitions,
        }


def sweep(h, pi, kappas: Sequence[int], ds: Sequence[int], targets: Sequence[TargetPredicate],
          encoding=None, state_budget=DEFAULT_STATE_BUDGET, with_counts=True):
    """Probability table over the ``kappa x d`` grid for fixed ``h, pi``.

    A cell that exceeds the state budget is reported with an error and no
    probability; the sweep carries on with the next cell.
    """
    rows = []
    d_max = max(ds)
    for kappa in kappas:
        cfg = AutomatonConfig(pi, kappa)
        for target in targets:
            enc = encoding or default_encoding(target)
            try:
                curve = reach_curve(cfg, h, d_max, target, enc, state_budget)
            except ResourceError as exc:
                rows.extend(SweepRow(h, pi, kappa, d, target.value, None, exc.states_seen,
                                     exc.transitions_seen, str(exc)) for d in ds)
                continue
            for d in ds:
                states = transitions = 0
                if with_counts:
                    try:
                        c = count_states(cfg, MutatorWord(h, d), enc, state_budget)
                        states, transitions = c.states, c.transitions
                    except ResourceError as exc:
                        states, transitions = exc.states_seen, exc.transitions_seen
                rows.append(SweepRow(h, pi, kappa, d, target.value, curve[d], states, transitions))
    return rows


def write_csv(rows, out):
    out.write(CSV_VERSION + "\n")
    w = csv.DictWriter(out, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_dict())


def csv_text(rows):
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()
