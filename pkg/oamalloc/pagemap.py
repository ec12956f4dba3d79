# -*- coding: utf-8 -*-
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

"""
Pagemap: lock-free map from any address owned by the heap to the
descriptor of the superblock covering it.

Superblocks are superblock_size-aligned, so the map keeps one entry per
superblock-sized slot of the address space instead of one per page. The
entries live in a two-level radix tree whose leaves are published lazily
with a compare-and-swap; lookups are two plain loads.
"""
import logging
from typing import Any, NamedTuple, Optional

from oamalloc.atomics import AtomicArray

logger = logging.getLogger("oamalloc")

ADDRESS_BITS = 48


class PageInfo(NamedTuple):
    descriptor: Any
    size_class: int


class Pagemap:
    def __init__(self, superblock_size: int, page_size: int):
        """
        :param superblock_size: bytes, a power of two
        :param page_size: bytes
        """
        self.shift = superblock_size.bit_length() - 1
        if 1 << self.shift != superblock_size:
            raise ValueError("superblock_size must be a power of two")
        self.superblock_size = superblock_size
        self.page_size = page_size
        # split the slot number evenly between root and leaf index
        self.leaf_bits = (ADDRESS_BITS - self.shift + 1) // 2
        self.leaf_size = 1 << self.leaf_bits
        self._root: AtomicArray[AtomicArray[PageInfo]] = AtomicArray(
            1 << (ADDRESS_BITS - self.shift - self.leaf_bits)
        )

    def _split(self, addr: int):
        key = addr >> self.shift
        return key >> self.leaf_bits, key & (self.leaf_size - 1)

    def _leaf(self, top: int, create: bool) -> Optional[AtomicArray]:
        leaf = self._root.load(top)
        if leaf is None and create:
            fresh = AtomicArray(self.leaf_size)
            if not self._root.compare_and_swap(top, None, fresh):
                leaf = self._root.load(top)
            else:
                leaf = fresh
        return leaf

    def _slots(self, base: int, length: int):
        assert base % self.page_size == 0, f"{base:#x} is not page aligned"
        assert length > 0 and length % self.page_size == 0, f"bad length {length}"
        first = base >> self.shift
        last = (base + length - 1) >> self.shift
        for key in range(first, last + 1):
            yield key << self.shift

    def register_range(self, base: int, length: int, info: PageInfo):
        """
        Make every address in [base, base + length) resolve to info
        :param base: page aligned address
        :param length: bytes, a multiple of the page size
        :param info: PageInfo to publish
        """
        for slot in self._slots(base, length):
            top, index = self._split(slot)
            leaf = self._leaf(top, create=True)
            published = leaf.compare_and_swap(index, None, info)
            assert published, f"pagemap overlap at {slot:#x}"

    def republish_range(self, base: int, length: int, info: PageInfo):
        """Replace the entries of a registered range, used when a pooled
        superblock range is handed to a new size class."""
        for slot in self._slots(base, length):
            top, index = self._split(slot)
            self._leaf(top, create=True).store(index, info)

    def lookup(self, addr: int) -> Optional[PageInfo]:
        """
        :param addr: any address
        :return: the registered PageInfo, or None when addr is not owned by the heap
        """
        top, index = self._split(addr)
        if top >= len(self._root):
            return None
        leaf = self._root.load(top)
        if leaf is None:
            return None
        return leaf.load(index)

    def unregister_range(self, base: int, length: int):
        for slot in self._slots(base, length):
            top, index = self._split(slot)
            leaf = self._leaf(top, create=False)
            if leaf is None or leaf.load(index) is None:
                logger.warning(f"pagemap: {slot:#x} is not registered")
                continue
            leaf.store(index, None)
