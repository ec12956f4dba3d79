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
Public allocator facade: malloc_(), free_() and palloc().

Blocks returned by palloc() come from persistent superblocks: after
free_() they are recycled by later palloc() calls anywhere in the
process, and their addresses stay readable for the process lifetime.
"""
import logging
import threading
import weakref
from collections import Counter
from typing import Dict, Iterable, List, Optional, Tuple, Union

from oamalloc.atomics import AtomicCell
from oamalloc.configuration import Configuration, configuration
from oamalloc.exceptions import (
    InvalidFreeException,
    OamallocException,
    UnsupportedSizeException,
)
from oamalloc.heap import Descriptor, Heap
from oamalloc.pagemap import Pagemap
from oamalloc.size_classes import LARGE_ALLOC, SizeClassTable
from oamalloc.thread_cache import ThreadCache
from oamalloc.vm_backend import BackendKind, VirtualMemory

logger = logging.getLogger("oamalloc")


class Allocator:
    def __init__(
        self,
        backend: Union[BackendKind, str] = BackendKind.KEEP_RESIDENT,
        superblock_size: int = 2 * 1024 * 1024,
        max_class_size: int = 16 * 1024,
        page_size: Optional[int] = None,
        cache_capacity: int = 64,
        flush_fraction: float = 0.5,
        shared_region_length: Optional[int] = None,
        debug: bool = False,
    ):
        """
        :param backend: BackendKind or its name: keep, advise or shared
        :param superblock_size: bytes, a power of two
        :param max_class_size: bytes, largest size-class block
        :param page_size: bytes, the platform page size if omitted
        :param cache_capacity: blocks per thread-cache stack
        :param flush_fraction: share of a full stack flushed on overflow
        :param shared_region_length: bytes, SharedRemap region size
        :param debug: keep a shadow map of live blocks and check cache ownership
        """
        page_size = page_size or configuration.page_size
        self.table = SizeClassTable(superblock_size, page_size, max_class_size)
        self.pagemap = Pagemap(superblock_size, page_size)
        self.vm = VirtualMemory(
            superblock_size, page_size, BackendKind(backend), shared_region_length
        )
        self.heap = Heap(self.table, self.pagemap, self.vm)
        self.cache_capacity = cache_capacity
        self.flush_fraction = flush_fraction
        self.debug = debug
        self._local = threading.local()
        self._caches: "weakref.WeakSet[ThreadCache]" = weakref.WeakSet()
        self._live: Dict[int, int] = {}
        self._shadow_lock = threading.Lock()
        logger.debug(
            f"allocator: backend={self.vm.kind.value}, "
            f"{len(self.table)} size classes up to {max_class_size}B"
        )

    @classmethod
    def from_configuration(cls, conf: Configuration) -> "Allocator":
        conf.validate()
        return cls(
            backend=conf.backend,
            superblock_size=conf.superblock_size,
            max_class_size=conf.max_class_size,
            page_size=conf.page_size,
            cache_capacity=conf.cache_capacity,
            flush_fraction=conf.flush_fraction,
            shared_region_length=conf.shared_region_length,
            debug=conf.debug,
        )

    @property
    def backend(self) -> BackendKind:
        return self.vm.kind

    def thread_cache(self) -> ThreadCache:
        cache = getattr(self._local, "cache", None)
        if cache is None:
            cache = ThreadCache(
                self.heap, self.cache_capacity, self.flush_fraction, self.debug
            )
            self._local.cache = cache
            self._caches.add(cache)
        return cache

    def _track(self, addr: int, size: int):
        with self._shadow_lock:
            if addr in self._live:
                msg = f"{addr:#x} handed out twice"
                logger.error(msg)
                raise OamallocException(msg)
            self._live[addr] = size

    def malloc_(self, size: int) -> int:
        """
        Allocate size bytes
        :param size: bytes, at least 1
        :return: block address
        :raises AllocationException: when the OS refuses memory
        """
        size_class = self.table.class_for_size(size)
        if size_class == LARGE_ALLOC:
            addr = self.heap.allocate_large(size)
        else:
            addr = self.thread_cache().cache_alloc(size_class, False)
        if self.debug:
            self._track(addr, size)
        return addr

    def palloc(self, size: int) -> int:
        """
        Allocate size bytes from a persistent superblock; the address stays
        readable after free_() for the process lifetime
        :param size: bytes, 1 to max_class_size
        :return: block address
        :raises UnsupportedSizeException: size is above the largest size class
        """
        size_class = self.table.class_for_size(size)
        if size_class == LARGE_ALLOC:
            raise UnsupportedSizeException(
                f"palloc({size}): persistent blocks are limited to "
                f"{self.table.max_class_size} bytes"
            )
        addr = self.thread_cache().cache_alloc(size_class, True)
        if self.debug:
            self._track(addr, size)
        return addr

    def free_(self, addr: int):
        """
        Release a block returned by malloc_() or palloc()
        :param addr: block address
        :raises InvalidFreeException: addr is unknown, or freed twice (debug)
        """
        info = self.pagemap.lookup(addr)
        if info is None:
            msg = f"free_({addr:#x}): address not owned by the allocator"
            logger.error(msg)
            raise InvalidFreeException(msg)
        if self.debug:
            with self._shadow_lock:
                if self._live.pop(addr, None) is None:
                    raise InvalidFreeException(f"free_({addr:#x}): double free")
        if info.size_class == LARGE_ALLOC:
            self.heap.free_large(info.descriptor)
        else:
            self.thread_cache().cache_free(addr, info)

    def usable_size(self, addr: int) -> int:
        info = self.pagemap.lookup(addr)
        if info is None:
            raise InvalidFreeException(f"{addr:#x} is not owned by the allocator")
        if info.size_class == LARGE_ALLOC:
            return info.descriptor.length
        return self.table.block_size(info.size_class)

    def thread_exit(self):
        """Drain and drop the calling thread's cache."""
        cache = getattr(self._local, "cache", None)
        if cache is not None:
            cache.cache_drain_on_exit()
            self._caches.discard(cache)
            del self._local.cache

    def drain_caches(self):
        """Drain every thread cache. Only valid while no thread allocates."""
        for cache in list(self._caches):
            cache.cache_drain_on_exit()

    def cached_blocks(self) -> Counter:
        counts: Counter = Counter()
        for cache in list(self._caches):
            counts.update(cache.cached_per_descriptor())
        return counts

    def audit(
        self, live: Optional[Iterable[int]] = None
    ) -> List[Tuple[Descriptor, int, int, int]]:
        """
        Conservation check at a quiescent point: for every descriptor,
        cached + live + anchor.count must equal block_count
        :param live: addresses held by the application, the debug shadow map if omitted
        :return: list of (descriptor, cached, live, free) tuples that do not add up
        """
        if live is None:
            live = list(self._live)
        live_counts: Counter = Counter()
        for addr in live:
            info = self.pagemap.lookup(addr)
            if info is not None and info.size_class != LARGE_ALLOC:
                live_counts[info.descriptor] += 1
        cached = self.cached_blocks()
        violations = []
        for desc in self.heap.live_descriptors():
            free = desc.load_anchor().count
            if cached[desc] + live_counts[desc] + free != desc.block_count:
                violations.append((desc, cached[desc], live_counts[desc], free))
        return violations

    def stats(self) -> Dict[str, int]:
        stats = self.heap.stats.as_dict()
        stats["syscalls"] = self.vm.syscalls.load()
        stats["generic_pool"] = len(self.heap.generic_pool)
        stats["persistent_pool"] = len(self.heap.persistent_pool)
        return stats


_default: AtomicCell[Optional[Allocator]] = AtomicCell(None)


def get_allocator() -> Allocator:
    """Process-wide allocator, built from the configuration on first use."""
    allocator = _default.load()
    if allocator is None:
        fresh = Allocator.from_configuration(configuration)
        _default.compare_and_swap(None, fresh)
        allocator = _default.load()
    return allocator


def malloc_(size: int) -> int:
    return get_allocator().malloc_(size)


def palloc(size: int) -> int:
    return get_allocator().palloc(size)


def free_(addr: int):
    get_allocator().free_(addr)
