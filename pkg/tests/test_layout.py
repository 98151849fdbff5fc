import pytest

from compactfit import layout
from compactfit.heap import Heap, HeapConfig, CLASS_RECORD_BYTES


@pytest.mark.parametrize("key,header", sorted(layout.LAYOUT_TABLE.items()))
def test_header_matches_committed_table(key, header):
    page_bytes, min_block = key
    assert layout.header_bytes(page_bytes, min_block) == header
    assert header % layout.HEADER_ALIGN == 0


def test_blocks_per_page_default_classes():
    # 16 KiB pages, smallest block 16: 256 header bytes leave 16128
    assert layout.payload_bytes(16384, 16) == 16128
    assert layout.blocks_per_page(16384, 16, 16) == 1008
    assert layout.blocks_per_page(16384, 32, 16) == 504


def test_default_ladder_is_closed_by_payload():
    sizes = layout.default_class_sizes()
    assert sizes[0] == 16
    assert sizes[-1] == 16128
    assert all(b == 2 * a for a, b in zip(sizes[:-2], sizes[1:-1]))


def test_bitmap_covers_every_smallest_block():
    for (page_bytes, min_block) in layout.LAYOUT_TABLE:
        assert layout.bitmap_bytes(page_bytes, min_block) * 8 >= page_bytes // min_block


def test_heap_uses_layout():
    heap = Heap(HeapConfig(class_block_sizes=[16, 32]))
    assert [c.pi for c in heap.classes] == [1008, 504]
    assert [c.usable for c in heap.classes] == [8, 24]
    assert len(heap.pages) == 64


def test_class_records_are_aligned():
    heap = Heap(HeapConfig())
    heap.new_class_set()
    for classes in heap.class_sets:
        for cls in classes:
            assert cls.record_offset % CLASS_RECORD_BYTES == 0


@pytest.mark.parametrize("abstract,expected", [(True, 24), (False, 32)])
def test_usable_bytes(abstract, expected):
    assert layout.usable_bytes(32, abstract) == expected
