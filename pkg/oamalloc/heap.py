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
Heap: superblocks, their descriptors and the anchor state machine.

A superblock moves Full -> Partial when its first block comes back,
Partial -> Full when a fill drains it, Partial -> Empty when its last
block comes back, and Empty -> Full when its descriptor is reused.
Persistent superblocks under the keep-resident backend never become
Empty; they stay on their partial list and remain usable.
"""
import ctypes
import logging
from collections import defaultdict
from enum import IntEnum
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from oamalloc.atomics import AtomicCell, LockFreeStack, load_word, store_word
from oamalloc.pagemap import PageInfo, Pagemap
from oamalloc.size_classes import LARGE_ALLOC, SizeClassTable
from oamalloc.vm_backend import BackendKind, VirtualMemory

logger = logging.getLogger("oamalloc")

INDEX_BITS = 24
INDEX_MASK = (1 << INDEX_BITS) - 1
TAG_BITS = 64 - 2 - 2 * INDEX_BITS
TAG_MASK = (1 << TAG_BITS) - 1


class SuperblockState(IntEnum):
    FULL = 0
    PARTIAL = 1
    EMPTY = 2


class Anchor(NamedTuple):
    state: SuperblockState
    avail: int
    count: int
    tag: int

    def pack(self) -> int:
        return (
            int(self.state)
            | self.avail << 2
            | self.count << (2 + INDEX_BITS)
            | (self.tag & TAG_MASK) << (2 + 2 * INDEX_BITS)
        )

    @classmethod
    def unpack(cls, word: int) -> "Anchor":
        return cls(
            SuperblockState(word & 0x3),
            (word >> 2) & INDEX_MASK,
            (word >> (2 + INDEX_BITS)) & INDEX_MASK,
            word >> (2 + 2 * INDEX_BITS),
        )


class Descriptor:
    """Superblock metadata. Never deallocated; recycled through the pools."""

    def __init__(self):
        self.superblock_base = 0
        self.size_class = 0
        self.block_size = 0
        self.block_count = 0
        self.persistent = False
        self.kind = BackendKind.KEEP_RESIDENT
        self.anchor: AtomicCell[int] = AtomicCell(
            Anchor(SuperblockState.EMPTY, 0, 0, 0).pack()
        )
        # flusher and partial-list popper both vote before pooling an empty superblock
        self.retire_votes: AtomicCell[int] = AtomicCell(0)

    def __repr__(self):
        return (
            f"Descriptor(base={self.superblock_base:#x}, class={self.size_class}, "
            f"persistent={self.persistent}, anchor={self.load_anchor()})"
        )

    def load_anchor(self) -> Anchor:
        return Anchor.unpack(self.anchor.load())

    def block_address(self, index: int) -> int:
        return self.superblock_base + index * self.block_size

    def block_index(self, addr: int) -> int:
        return (addr - self.superblock_base) // self.block_size


class LargeBlock(NamedTuple):
    base: int
    # requested bytes
    length: int
    # bytes mapped and registered, fixed at allocation
    mapped_length: int


class HeapStats:
    """Event counters of a heap, exact under concurrent updates."""

    NAMES = (
        "descriptors",
        "reserved",
        "released",
        "neutralized",
        "rearmed",
        "generic_pool_hits",
        "persistent_pool_hits",
        "fills",
        "flushes",
        "large",
        "large_freed",
    )

    def __init__(self):
        self._counters: Dict[str, AtomicCell[int]] = {
            name: AtomicCell(0) for name in self.NAMES
        }

    def count(self, name: str, delta: int = 1):
        self._counters[name].fetch_add(delta)

    def __getitem__(self, name: str) -> int:
        return self._counters[name].load()

    def as_dict(self) -> Dict[str, int]:
        return {name: cell.load() for name, cell in self._counters.items()}


class Heap:
    def __init__(self, table: SizeClassTable, pagemap: Pagemap, vm: VirtualMemory):
        self.table = table
        self.pagemap = pagemap
        self.vm = vm
        self.partial: Dict[Tuple[int, bool], LockFreeStack[Descriptor]] = {
            (size_class, persistent): LockFreeStack()
            for size_class in range(len(table))
            for persistent in (False, True)
        }
        self.generic_pool: LockFreeStack[Descriptor] = LockFreeStack()
        self.persistent_pool: LockFreeStack[Descriptor] = LockFreeStack()
        self.descriptors: List[Descriptor] = []
        self.stats = HeapStats()

    @property
    def keeps_persistent(self) -> bool:
        return not self.vm.kind.releases_memory

    def _thread_free_list(self, desc: Descriptor):
        """Link block i to block i + 1; the last block links to block_count."""
        words = np.ctypeslib.as_array(
            (ctypes.c_uint64 * (self.table.superblock_size // 8)).from_address(
                desc.superblock_base
            )
        )
        stride = desc.block_size // 8
        words[0 : desc.block_count * stride : stride] = np.arange(
            1, desc.block_count + 1, dtype=np.uint64
        )

    def new_superblock(self, size_class: int, persistent: bool) -> Descriptor:
        """
        Obtain a descriptor and a superblock for size_class. Persistent requests
        reuse a pooled persistent range first, then a generic descriptor with a
        fresh reservation, then a brand-new descriptor.

        :param size_class: class index
        :param persistent: bool, the superblock serves palloc()
        :return: descriptor in the Full state owning every block, whose
                 in-superblock free list links all blocks in order
        :raises AllocationException: when the OS refuses the reservation
        """
        desc = None
        reused = False
        if persistent:
            desc = self.persistent_pool.pop()
            if desc is not None:
                self.vm.rearm_superblock(desc.superblock_base, desc.kind)
                self.stats.count("persistent_pool_hits")
                self.stats.count("rearmed")
                reused = True
        if desc is None:
            desc = self.generic_pool.pop()
            if desc is None:
                desc = Descriptor()
                self.descriptors.append(desc)
                self.stats.count("descriptors")
            else:
                self.stats.count("generic_pool_hits")
            try:
                desc.superblock_base = self.vm.reserve_superblock()
            except Exception:
                self.generic_pool.push(desc)
                raise
            self.stats.count("reserved")

        desc.size_class = size_class
        desc.block_size = self.table.block_size(size_class)
        desc.block_count = self.table.blocks_per_superblock(size_class)
        desc.persistent = persistent
        desc.kind = self.vm.kind
        desc.retire_votes.store(0)
        self._thread_free_list(desc)
        tag = desc.load_anchor().tag + 1
        desc.anchor.store(Anchor(SuperblockState.FULL, 0, 0, tag).pack())

        info = PageInfo(desc, size_class)
        if reused:
            self.pagemap.republish_range(
                desc.superblock_base, self.table.superblock_size, info
            )
        else:
            self.pagemap.register_range(
                desc.superblock_base, self.table.superblock_size, info
            )
        logger.debug(
            f"new superblock {desc.superblock_base:#x} class {size_class} "
            f"({desc.block_size}B x {desc.block_count}), persistent={persistent}"
        )
        return desc

    def _give_back_tail(self, desc: Descriptor, first: int):
        """Return blocks [first, block_count) of a freshly carved superblock."""
        while True:
            old = desc.anchor.load()
            anchor = Anchor.unpack(old)
            new = Anchor(
                SuperblockState.PARTIAL,
                first,
                desc.block_count - first,
                anchor.tag + 1,
            )
            if desc.anchor.compare_and_swap(old, new.pack()):
                break
        self.partial[(desc.size_class, desc.persistent)].push(desc)

    def _take_from_partial(self, desc: Descriptor, want: int, out: List[int]):
        # reserve the whole free list first; nobody can empty the superblock
        # while its blocks are held here, so walking the list is safe
        while True:
            old = desc.anchor.load()
            anchor = Anchor.unpack(old)
            if anchor.state is SuperblockState.EMPTY:
                self._vote_retire(desc)
                return
            if anchor.count == 0:
                return
            new = Anchor(SuperblockState.FULL, 0, 0, anchor.tag + 1)
            if desc.anchor.compare_and_swap(old, new.pack()):
                break
        taken = []
        index = anchor.avail
        for _ in range(anchor.count):
            taken.append(desc.block_address(index))
            index = load_word(desc.block_address(index))
        out.extend(taken[:want])
        if len(taken) > want:
            self._flush_to(desc, taken[want:])

    def fill_cache(
        self, size_class: int, persistent: bool, out: List[int], capacity: int
    ):
        """
        Fill an empty cache stack from the heap
        :param size_class: class index
        :param persistent: bool, take blocks of persistent superblocks only
        :param out: list receiving block addresses
        :param capacity: maximal number of blocks to take
        :raises AllocationException: when a new superblock cannot be mapped
        """
        self.stats.count("fills")
        partial = self.partial[(size_class, persistent)]
        while len(out) < capacity:
            desc = partial.pop()
            if desc is None:
                break
            self._take_from_partial(desc, capacity - len(out), out)
        if len(out) < capacity:
            desc = self.new_superblock(size_class, persistent)
            take = min(capacity - len(out), desc.block_count)
            out.extend(desc.block_address(index) for index in range(take))
            if take < desc.block_count:
                self._give_back_tail(desc, take)

    def flush_cache(self, blocks: List[int]):
        """
        Return blocks to the free lists of their superblocks
        :param blocks: block addresses, possibly from several superblocks
        """
        self.stats.count("flushes")
        groups: Dict[Descriptor, List[int]] = defaultdict(list)
        for addr in blocks:
            info = self.pagemap.lookup(addr)
            groups[info.descriptor].append(addr)
        for desc, addrs in groups.items():
            self._flush_to(desc, addrs)

    def _flush_to(self, desc: Descriptor, addrs: List[int]):
        indices = [desc.block_index(addr) for addr in addrs]
        for addr, next_index in zip(addrs, indices[1:]):
            store_word(addr, next_index)
        last = addrs[-1]
        never_empty = desc.persistent and self.keeps_persistent
        while True:
            old = desc.anchor.load()
            anchor = Anchor.unpack(old)
            store_word(last, anchor.avail if anchor.count else desc.block_count)
            count = anchor.count + len(indices)
            if count == desc.block_count and not never_empty:
                state = SuperblockState.EMPTY
            else:
                state = SuperblockState.PARTIAL
            new = Anchor(state, indices[0], count, anchor.tag + 1)
            if desc.anchor.compare_and_swap(old, new.pack()):
                break
        if anchor.state is SuperblockState.FULL:
            self.partial[(desc.size_class, desc.persistent)].push(desc)
        if state is SuperblockState.EMPTY:
            self.retire_superblock(desc)

    def retire_superblock(self, desc: Descriptor):
        """
        Give back the memory of an Empty superblock. Non-persistent ranges
        are unmapped; persistent ranges are neutralized and keep their
        pagemap entries so that every address stays readable.
        """
        base = desc.superblock_base
        if not desc.persistent:
            self.pagemap.unregister_range(base, self.table.superblock_size)
            self.vm.release_superblock(base)
            self.stats.count("released")
        elif desc.kind.releases_memory:
            self.vm.neutralize_superblock(base, desc.kind)
            self.stats.count("neutralized")
        else:
            return
        logger.debug(f"retired superblock {base:#x}, persistent={desc.persistent}")
        partial = self.partial[(desc.size_class, desc.persistent)]
        self._vote_retire(desc)
        self._remove_empty(partial, desc)

    def _remove_empty(self, partial: LockFreeStack, desc: Descriptor):
        """
        Unlink desc from its partial list. Every Empty descriptor popped on
        the way gets its removal vote; a popper racing with us votes for
        desc instead.
        """
        held = []
        while True:
            other = partial.pop()
            if other is None:
                break
            if other.load_anchor().state is SuperblockState.EMPTY:
                self._vote_retire(other)
                if other is desc:
                    break
            else:
                held.append(other)
        for other in reversed(held):
            if other.load_anchor().state is SuperblockState.EMPTY:
                self._vote_retire(other)
            else:
                partial.push(other)

    def _vote_retire(self, desc: Descriptor):
        if desc.retire_votes.fetch_add(1) != 1:
            return
        if desc.persistent:
            self.persistent_pool.push(desc)
        else:
            self.generic_pool.push(desc)

    def allocate_large(self, size: int) -> int:
        """Map a dedicated range for a request above the largest size class."""
        base = self.vm.reserve_large(size)
        block = LargeBlock(base, size, self.vm.large_length(size))
        self.pagemap.register_range(
            base, block.mapped_length, PageInfo(block, LARGE_ALLOC)
        )
        self.stats.count("large")
        return base

    def free_large(self, block: LargeBlock):
        self.pagemap.unregister_range(block.base, block.mapped_length)
        self.vm.release(block.base, block.mapped_length)
        self.stats.count("large_freed")

    def live_descriptors(self) -> List[Descriptor]:
        """Descriptors whose superblock is currently mapped or neutralized."""
        pooled = set(self.generic_pool) | set(self.persistent_pool)
        return [
            desc
            for desc in self.descriptors
            if desc not in pooled
            and desc.load_anchor().state is not SuperblockState.EMPTY
        ]
