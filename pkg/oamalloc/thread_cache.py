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
Per-thread caches: one bounded stack of free blocks per size class and
persistence flavour. Only the owner thread touches a cache, so the hot
allocation and free paths need no synchronization.
"""
import logging
import threading
import weakref
from collections import Counter
from typing import List, Optional

from oamalloc.exceptions import InvalidFreeException
from oamalloc.heap import Heap
from oamalloc.pagemap import PageInfo

logger = logging.getLogger("oamalloc")


def _drain(heap: Heap, stacks: List[List[List[int]]]):
    for flavour in stacks:
        for stack in flavour:
            if stack:
                heap.flush_cache(list(stack))
                stack.clear()


class ThreadCache:
    def __init__(
        self, heap: Heap, capacity: int, flush_fraction: float = 0.5, debug=False
    ):
        """
        :param heap: Heap the cache fills from and flushes to
        :param capacity: blocks per stack
        :param flush_fraction: share of a full stack returned to the heap on overflow
        :param debug: check that only the owner thread uses the cache
        """
        self.heap = heap
        self.capacity = capacity
        self.flush_count = max(1, int(capacity * flush_fraction))
        self.debug = debug
        self.owner = threading.get_ident()
        # stacks[persistent][size_class]
        self.stacks: List[List[List[int]]] = [
            [[] for _ in range(len(heap.table))] for _ in (False, True)
        ]
        # blocks still cached when the owner thread goes away return to the heap
        self._finalizer = weakref.finalize(self, _drain, heap, self.stacks)
        self._finalizer.atexit = False

    def _check_owner(self):
        if self.debug:
            assert self.owner == threading.get_ident(), "thread cache used by a foreign thread"

    def cache_alloc(self, size_class: int, persistent: bool) -> int:
        """
        Pop a block, filling the stack from the heap first when it is empty
        :param size_class: class index
        :param persistent: bool, take a block of a persistent superblock
        :return: block address
        """
        self._check_owner()
        stack = self.stacks[persistent][size_class]
        if not stack:
            self.heap.fill_cache(size_class, persistent, stack, self.capacity)
        return stack.pop()

    def cache_free(self, addr: int, info: Optional[PageInfo] = None):
        """
        Push a block, flushing the oldest part of a full stack first
        :param addr: block address
        :param info: pagemap entry of addr, looked up when omitted
        :raises InvalidFreeException: addr is not in a registered superblock
        """
        self._check_owner()
        if info is None:
            info = self.heap.pagemap.lookup(addr)
            if info is None:
                raise InvalidFreeException(f"{addr:#x} was not allocated here")
        stack = self.stacks[info.descriptor.persistent][info.size_class]
        if len(stack) >= self.capacity:
            batch = stack[: self.flush_count]
            del stack[: self.flush_count]
            self.heap.flush_cache(batch)
        stack.append(addr)

    def cache_drain_on_exit(self):
        """Return every cached block to the heap."""
        _drain(self.heap, self.stacks)

    def __len__(self):
        return sum(len(stack) for flavour in self.stacks for stack in flavour)

    def cached_per_descriptor(self) -> Counter:
        counts: Counter = Counter()
        for flavour in self.stacks:
            for stack in flavour:
                for addr in stack:
                    counts[self.heap.pagemap.lookup(addr).descriptor] += 1
        return counts
