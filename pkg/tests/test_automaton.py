import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactfit.automaton import (FULL_PAGE, AutomatonConfig, AutomatonState, StateClass, after_allocs, classify,
                                  dealloc_selectors, step_alloc, step_compact, step_dealloc)
from compactfit.errors import ContractError


def S(h, *u):
    return AutomatonState(h, tuple(u))


@pytest.mark.parametrize("state,pi,kappa,expected", [
    (S(0), 10, 1, StateClass.EMPTY),
    (S(10), 10, 1, StateClass.FULL),
    (S(7, 3, 3), 4, 1, StateClass.COMPACTION),
    (S(5, 1), 4, 1, StateClass.NOT_FULL),
    (S(7, 3, 3), 4, None, StateClass.NOT_FULL),
])
def test_classify(state, pi, kappa, expected):
    assert classify(state, AutomatonConfig(pi, kappa)) is expected


@pytest.mark.parametrize("before,pi,after", [
    (S(0), 6, S(1, 1)),
    (S(5, 5), 6, S(6)),
    (S(10), 10, S(11, 1)),
    (S(2, 2), 3, S(3)),
    (S(0), 1, S(1)),
])
def test_step_alloc(before, pi, after):
    assert step_alloc(before, AutomatonConfig(pi, 2)) == after


@pytest.mark.parametrize("before,sel,pi,kappa,after", [
    (S(6, 3), 0, 10, 1, S(5, 2)),
    (S(5, 1), 0, 10, 1, S(4)),
    (S(8, 3), FULL_PAGE, 4, 1, S(7, 3, 3)),
    (S(9, 1, 2, 2), 0, 4, 3, S(8, 2, 2)),  # emptied page, the rest shift left
    (S(3), FULL_PAGE, 1, 1, S(2)),
])
def test_step_dealloc(before, sel, pi, kappa, after):
    assert step_dealloc(before, AutomatonConfig(pi, kappa), sel) == after


def test_dealloc_into_compaction_state():
    cfg = AutomatonConfig(4, 1)
    s = step_dealloc(S(8, 3), cfg, FULL_PAGE)
    assert classify(s, cfg) is StateClass.COMPACTION


@pytest.mark.parametrize("before,pi,kappa,after", [
    (S(7, 3, 3), 4, 1, S(7, 2)),
    (S(5, 1, 3), 4, 1, S(5)),
    (S(7, 1, 1, 2), 3, 2, S(7, 1)),
])
def test_step_compact(before, pi, kappa, after):
    assert step_compact(before, AutomatonConfig(pi, kappa)) == after


def test_illegal_steps_raise():
    cfg = AutomatonConfig(4, 1)
    with pytest.raises(ContractError):
        step_alloc(S(7, 3, 3), cfg)
    with pytest.raises(ContractError):
        step_dealloc(S(7, 3, 3), cfg, 0)
    with pytest.raises(ContractError):
        step_compact(S(5, 1), cfg)
    with pytest.raises(ContractError):
        step_dealloc(S(0), cfg, FULL_PAGE)
    with pytest.raises(ContractError):
        step_dealloc(S(3, 3), cfg, FULL_PAGE)  # no full page
    with pytest.raises(ContractError):
        step_dealloc(S(3, 3), cfg, 1)


@pytest.mark.parametrize("state", [S(3, 4), S(5, 1, 1, 1), S(-1), S(2, 3)])
def test_validate_rejects_malformed(state):
    with pytest.raises(ContractError):
        state.validate(AutomatonConfig(4, 1))


def test_strict_validation_wants_whole_full_pages():
    cfg = AutomatonConfig(4, 1)
    S(7, 3, 3).validate(cfg)
    with pytest.raises(ContractError):
        S(7, 3, 3).validate(cfg, strict=True)
    S(10, 3, 3).validate(cfg, strict=True)


def test_config_rejects_bad_values():
    with pytest.raises(ContractError):
        AutomatonConfig(0)
    with pytest.raises(ContractError):
        AutomatonConfig(4, 0)


def test_fragmentation_formula():
    cfg = AutomatonConfig(3, 2)
    assert S(2, 1, 1).fragmentation(cfg) == 4
    assert S(8, 1, 1).fragmentation(AutomatonConfig(10, 2)) == 2 * 9


@pytest.mark.parametrize("h,pi", [(0, 4), (4, 4), (9, 4), (5, 1)])
def test_after_allocs_matches_repeated_alloc(h, pi):
    cfg = AutomatonConfig(pi, None)
    s = AutomatonState()
    for _ in range(h):
        s = step_alloc(s, cfg)
    assert after_allocs(h, cfg) == s


def _reachable(cfg, max_h):
    """Every state reachable from EMPTY without exceeding ``max_h``."""
    seen = {AutomatonState()}
    todo = [AutomatonState()]
    while todo:
        s = todo.pop()
        nxt = []
        if classify(s, cfg) is StateClass.COMPACTION:
            nxt.append(step_compact(s, cfg))
        else:
            if s.h < max_h:
                nxt.append(step_alloc(s, cfg))
            nxt.extend(step_dealloc(s, cfg, sel) for sel in dealloc_selectors(s, cfg))
        for t in nxt:
            if t not in seen:
                seen.add(t)
                todo.append(t)
    return seen


@pytest.mark.parametrize("pi,kappa", [(2, 1), (3, 1), (3, 2), (4, 2), (1, 1)])
def test_reachable_states_keep_invariants(pi, kappa):
    cfg = AutomatonConfig(pi, kappa)
    for s in _reachable(cfg, 14):
        s.validate(cfg, strict=True)
        assert s.n <= kappa + 1
        if classify(s, cfg) is not StateClass.COMPACTION:
            assert s.fragmentation(cfg) <= kappa * (pi - 1)


def test_compaction_preserves_h_and_leaves_input_state():
    for pi, kappa in itertools.product((2, 3, 5), (1, 2, 3)):
        cfg = AutomatonConfig(pi, kappa)
        for s in _reachable(cfg, 12):
            if classify(s, cfg) is StateClass.COMPACTION:
                t = step_compact(s, cfg)
                assert t.h == s.h
                assert t.n in (kappa - 1, kappa)


@settings(max_examples=200, deadline=None)
@given(pi=st.integers(2, 6), kappa=st.integers(1, 4), choices=st.lists(st.integers(0, 10 ** 6), max_size=80))
def test_random_walks_stay_legal(pi, kappa, choices):
    cfg = AutomatonConfig(pi, kappa)
    s = AutomatonState()
    for c in choices:
        if classify(s, cfg) is StateClass.COMPACTION:
            s = step_compact(s, cfg)
        elif c % 2 == 0 or s.h == 0:
            s = step_alloc(s, cfg)
        else:
            sels = dealloc_selectors(s, cfg)
            s = step_dealloc(s, cfg, sels[c // 2 % len(sels)])
        s.validate(cfg, strict=True)
