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
Virtual memory backend: reserving and releasing superblocks, and the
strategies that free the physical frames of an empty persistent
superblock while keeping its address range readable.
"""
import ctypes
import ctypes.util
import logging
import os
import sys
import threading
from enum import Enum
from typing import Dict, Optional

import psutil

from oamalloc.atomics import AtomicCell
from oamalloc.exceptions import AllocationException, VirtualMemoryException
from oamalloc.utils import align_up

logger = logging.getLogger("oamalloc")

LINUX = sys.platform.startswith("linux")

PROT_NONE = 0x0
PROT_READ = 0x1
PROT_WRITE = 0x2

MAP_SHARED = 0x01
MAP_PRIVATE = 0x02
MAP_FIXED = 0x10
if LINUX:
    MAP_ANONYMOUS = 0x20
    MAP_NORESERVE = 0x4000
else:
    MAP_ANONYMOUS = 0x1000
    MAP_NORESERVE = 0x0

MADV_DONTNEED = 4

MAP_FAILED = ctypes.c_void_p(-1).value


class BackendKind(Enum):
    KEEP_RESIDENT = "keep"
    ADVISE_RELEASE = "advise"
    SHARED_REMAP = "shared"

    @property
    def releases_memory(self) -> bool:
        return self is not BackendKind.KEEP_RESIDENT


class RangeState(Enum):
    MAPPED = "mapped"
    NEUTRALIZED = "neutralized"
    UNMAPPED = "unmapped"


def _load_libc():
    libc = ctypes.CDLL(ctypes.util.find_library("c"), use_errno=True)

    # void *mmap(void *addr, size_t length, int prot, int flags, int fd, off_t offset);
    libc.mmap.restype = ctypes.c_void_p
    libc.mmap.argtypes = [
        ctypes.c_void_p,
        ctypes.c_size_t,
        ctypes.c_int,
        ctypes.c_int,
        ctypes.c_int,
        ctypes.c_long,
    ]
    # int munmap(void *addr, size_t length);
    libc.munmap.restype = ctypes.c_int
    libc.munmap.argtypes = [ctypes.c_void_p, ctypes.c_size_t]
    # int madvise(void *addr, size_t length, int advice);
    libc.madvise.restype = ctypes.c_int
    libc.madvise.argtypes = [ctypes.c_void_p, ctypes.c_size_t, ctypes.c_int]
    return libc


libc = _load_libc()


def _os_error(call: str) -> str:
    errno = ctypes.get_errno()
    return f"{call} failed: [{errno}] {os.strerror(errno)}"


class SharedRegion:
    """
    Memory-backed file mapped over every neutralized range. It stays mapped
    for the process lifetime; its own mapping at `base` is writable.
    """

    def __init__(self, length: int):
        self.length = length
        self.fd = os.memfd_create("oamalloc-shared", os.MFD_CLOEXEC)
        os.ftruncate(self.fd, length)
        addr = libc.mmap(None, length, PROT_READ | PROT_WRITE, MAP_SHARED, self.fd, 0)
        if addr in (None, MAP_FAILED):
            msg = _os_error("mmap(shared region)")
            os.close(self.fd)
            raise AllocationException(msg)
        self.base = addr
        logger.debug(f"shared region of {length} bytes at {addr:#x}")


class VirtualMemory:
    def __init__(
        self,
        superblock_size: int,
        page_size: int,
        kind: BackendKind = BackendKind.KEEP_RESIDENT,
        shared_region_length: Optional[int] = None,
    ):
        """
        :param superblock_size: bytes, alignment and length of superblocks
        :param page_size: bytes
        :param kind: default release strategy for persistent superblocks
        :param shared_region_length: bytes, SharedRemap region size
        """
        self.superblock_size = superblock_size
        self.page_size = page_size
        self.shared_region_length = shared_region_length or superblock_size
        if superblock_size % self.shared_region_length:
            raise ValueError("shared_region_length must divide superblock_size")
        if kind.releases_memory and not self.supports(kind):
            logger.warning(
                f"{kind.value!r} backend is not available on {sys.platform}, "
                "falling back to 'keep'"
            )
            kind = BackendKind.KEEP_RESIDENT
        self.kind = kind
        self._shared: AtomicCell[Optional[SharedRegion]] = AtomicCell(None)
        # debug ledger of the ranges currently mapped or neutralized: base -> (length, state)
        self.ranges: Dict[int, list] = {}
        # held across munmap so a base reused by the kernel is recorded after its release
        self._ranges_lock = threading.Lock()
        self.syscalls = AtomicCell(0)

    @staticmethod
    def supports(kind: BackendKind) -> bool:
        if kind is BackendKind.KEEP_RESIDENT:
            return True
        if kind is BackendKind.SHARED_REMAP:
            return LINUX and hasattr(os, "memfd_create")
        return LINUX

    def _mmap(self, addr, length, prot, flags, fd=-1) -> Optional[int]:
        self.syscalls.fetch_add()
        result = libc.mmap(addr, length, prot, flags, fd, 0)
        if result in (None, MAP_FAILED):
            return None
        return result

    def _munmap(self, addr: int, length: int):
        self.syscalls.fetch_add()
        if libc.munmap(addr, length) != 0:
            msg = _os_error(f"munmap({addr:#x}, {length})")
            logger.error(msg)
            raise VirtualMemoryException(msg)

    def _reserve_aligned(self, length: int) -> int:
        raw = self._mmap(
            None,
            length + self.superblock_size,
            PROT_READ | PROT_WRITE,
            MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE,
        )
        if raw is None:
            raise AllocationException(_os_error(f"mmap({length})"))
        base = align_up(raw, self.superblock_size)
        if base > raw:
            self._munmap(raw, base - raw)
        tail = raw + length + self.superblock_size - (base + length)
        if tail:
            self._munmap(base + length, tail)
        with self._ranges_lock:
            self.ranges[base] = [length, RangeState.MAPPED]
        return base

    def reserve_superblock(self) -> int:
        """
        Map a zero-filled, superblock_size-aligned read/write superblock
        :return: base address
        :raises AllocationException: when the OS refuses the mapping
        """
        return self._reserve_aligned(self.superblock_size)

    def large_length(self, size: int) -> int:
        """Bytes mapped by reserve_large(size)."""
        return align_up(size, self.page_size)

    def reserve_large(self, length: int) -> int:
        """Map a dedicated superblock-aligned range for one large block."""
        return self._reserve_aligned(self.large_length(length))

    def release_superblock(self, base: int):
        self.release(base, self.superblock_size)

    def release(self, base: int, length: int):
        length = align_up(length, self.page_size)
        with self._ranges_lock:
            self._munmap(base, length)
            self.ranges.pop(base, None)

    def shared_region(self) -> SharedRegion:
        region = self._shared.load()
        if region is None:
            fresh = SharedRegion(self.shared_region_length)
            if self._shared.compare_and_swap(None, fresh):
                region = fresh
            else:
                self._munmap(fresh.base, fresh.length)
                os.close(fresh.fd)
                region = self._shared.load()
        return region

    def neutralize_superblock(self, base: int, kind: Optional[BackendKind] = None):
        """
        Release the physical frames of an empty persistent superblock while
        keeping every address in it readable
        :param base: superblock base address
        :param kind: strategy, the backend default if omitted
        """
        kind = kind or self.kind
        if kind is BackendKind.ADVISE_RELEASE:
            self.syscalls.fetch_add()
            if libc.madvise(base, self.superblock_size, MADV_DONTNEED) != 0:
                msg = _os_error(f"madvise({base:#x})")
                logger.error(msg)
                raise VirtualMemoryException(msg)
        elif kind is BackendKind.SHARED_REMAP:
            region = self.shared_region()
            for offset in range(0, self.superblock_size, region.length):
                addr = self._mmap(
                    base + offset,
                    region.length,
                    PROT_READ,
                    MAP_SHARED | MAP_FIXED,
                    region.fd,
                )
                if addr is None:
                    msg = _os_error(f"mmap(shared over {base + offset:#x})")
                    logger.error(msg)
                    raise VirtualMemoryException(msg)
        if kind.releases_memory:
            with self._ranges_lock:
                self.ranges[base] = [self.superblock_size, RangeState.NEUTRALIZED]
            logger.debug(f"neutralized superblock {base:#x} ({kind.value})")

    def rearm_superblock(self, base: int, kind: Optional[BackendKind] = None):
        """
        Turn a neutralized range back into private, writable, zeroed memory
        :param base: superblock base address
        :param kind: strategy the range was neutralized with
        :raises AllocationException: when the OS refuses the mapping
        """
        kind = kind or self.kind
        if kind is BackendKind.SHARED_REMAP:
            addr = self._mmap(
                base,
                self.superblock_size,
                PROT_READ | PROT_WRITE,
                MAP_PRIVATE | MAP_ANONYMOUS | MAP_FIXED | MAP_NORESERVE,
            )
            if addr is None:
                raise AllocationException(_os_error(f"mmap(rearm {base:#x})"))
        with self._ranges_lock:
            self.ranges[base] = [self.superblock_size, RangeState.MAPPED]

    def range_state(self, base: int) -> RangeState:
        entry = self.ranges.get(base)
        return entry[1] if entry else RangeState.UNMAPPED

    @staticmethod
    def resident_bytes() -> Optional[int]:
        """Best-effort resident set size of the process, None if unavailable."""
        try:
            return psutil.Process().memory_info().rss
        except (psutil.Error, OSError) as exc:
            logger.debug(f"resident set size not available: {exc}")
            return None
