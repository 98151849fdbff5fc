import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactfit.freelist import NodeStore, PageStore, TwoLevelFreeList


def test_private_pop_leaves_public_head_alone():
    fl = TwoLevelFreeList(spill_bound=4, items=range(8))
    first = fl.pop()
    head = fl.head
    fl.push(first)
    assert fl.pop() == first
    assert fl.head is head


def test_initial_order_and_exhaustion():
    fl = TwoLevelFreeList(spill_bound=3, items=range(7))
    assert [fl.pop() for _ in range(7)] == list(range(7))
    assert fl.pop() is None


def test_adopting_detaches_one_sublist():
    fl = TwoLevelFreeList(spill_bound=4, items=range(8))
    assert fl.public_sublists() == 2
    v0 = fl.head.version
    fl.pop()
    assert fl.public_sublists() == 1
    assert fl.head.version == v0 + 1
    assert fl.private_len() == 3


def test_spill_publishes_one_chunk():
    fl = TwoLevelFreeList(spill_bound=4)
    for i in range(4):
        fl.push(i)
    v = fl.head.version
    assert fl.public_sublists() == 0
    fl.push(4)
    assert fl.head.version == v + 1
    assert fl.public_sublists() == 1
    assert fl.private_len() == 1


def test_page_store_links_live_in_page_memory():
    arena = bytearray(8 * 4096)
    fl = TwoLevelFreeList(PageStore(arena, 4096), spill_bound=2, items=range(8))
    assert fl.public_sublists() == 4
    assert any(arena)  # links were written into the pages
    assert sorted(fl.pop() for _ in range(8)) == list(range(8))


def test_rejects_bad_bound():
    with pytest.raises(ValueError):
        TwoLevelFreeList(spill_bound=0)


@settings(max_examples=100, deadline=None)
@given(bound=st.integers(1, 6), n=st.integers(0, 40), ops=st.lists(st.booleans(), max_size=120))
def test_no_element_lost_or_duplicated(bound, n, ops):
    fl = TwoLevelFreeList(NodeStore(), bound, range(n))
    out = []
    for pop in ops:
        if pop:
            x = fl.pop()
            if x is not None:
                out.append(x)
        elif out:
            fl.push(out.pop(0))
        assert fl.private_len() <= bound
    rest = []
    while (x := fl.pop()) is not None:
        rest.append(x)
    assert sorted(out + rest) == list(range(n))


def test_concurrent_adopters_never_share_a_sublist():
    fl = TwoLevelFreeList(spill_bound=8, items=range(8 * 2000))
    fl.audit()
    taken = [[] for _ in range(8)]

    def worker(t):
        for _ in range(3000):
            x = fl.pop()
            if x is None:
                return
            taken[t].append(x)
            if len(taken[t]) % 3 == 0:
                fl.push(taken[t].pop())

    threads = [threading.Thread(target=worker, args=(t,)) for t in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    flat = [x for lst in taken for x in lst]
    assert len(flat) == len(set(flat))
    assert fl.adoptions > 0
    assert fl.double_adoptions == 0
