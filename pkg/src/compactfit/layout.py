"""Byte layout of pages and blocks.

A page starts with a header followed by ``pi`` equally sized page-blocks::

    +--------+--------+------+-------+-------+--------+-----------+-----+
    | prev 8 | next 8 | used | owner | state | pad  4 | bitmap .. | pad |
    |        |        |  4   |   4   |   4   |        |           |     |
    +--------+--------+------+-------+-------+--------+-----------+-----+
    |<---------------- header_bytes (multiple of 128) ---------------->|

The bitmap has one bit per block of the smallest configured block size, so
one header layout serves every size-class of a heap.  While a page sits on
the free-page list the first two words hold the free-list links instead.

In ABSTRACT addressing mode every block begins with a one-word backlink
holding the handle of the object stored there; the usable payload is
``block_size - WORD``.  DIRECT mode has no backlink.
"""

WORD = 8
HEADER_FIXED_BYTES = 32
HEADER_ALIGN = 128
DEFAULT_PAGE_BYTES = 16 * 1024
DEFAULT_MIN_BLOCK = 16

# (page_bytes, smallest block) -> header bytes; checked by the test-suite so
# any change to the layout arithmetic shows up as a diff here.
LAYOUT_TABLE = {
    (16384, 16): 256,
    (16384, 32): 128,
    (4096, 16): 128,
    (65536, 16): 640,
}


def align_up(value, alignment):
    return -(-value // alignment) * alignment


def bitmap_bytes(page_bytes, min_block):
    bits = page_bytes // min_block
    return align_up(-(-bits // 8), WORD)


def header_bytes(page_bytes, min_block=DEFAULT_MIN_BLOCK):
    return align_up(HEADER_FIXED_BYTES + bitmap_bytes(page_bytes, min_block), HEADER_ALIGN)


def payload_bytes(page_bytes, min_block=DEFAULT_MIN_BLOCK):
    return page_bytes - header_bytes(page_bytes, min_block)


def blocks_per_page(page_bytes, block_size, min_block=DEFAULT_MIN_BLOCK):
    return payload_bytes(page_bytes, min_block) // block_size


def usable_bytes(block_size, abstract=True):
    return block_size - WORD if abstract else block_size


def default_class_sizes(page_bytes=DEFAULT_PAGE_BYTES, min_block=DEFAULT_MIN_BLOCK):
    """Geometric x2 ladder from ``min_block`` capped by the page payload.

    The payload size itself (rounded down to a word) closes the ladder so
    every object that fits a page has a class.
    """
    cap = payload_bytes(page_bytes, min_block)
    sizes = []
    size = min_block
    while size <= cap:
        sizes.append(size)
        size *= 2
    top = cap - cap % WORD
    if not sizes or sizes[-1] != top:
        sizes.append(top)
    return sizes
