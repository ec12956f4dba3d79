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

"""Tests of the virtual memory backend"""

import ctypes

import pytest
from flexmock import flexmock

from oamalloc.atomics import load_byte, load_word, store_word
from oamalloc.exceptions import AllocationException, VirtualMemoryException
from oamalloc.vm_backend import BackendKind, RangeState, VirtualMemory
from tests.conftest import linux_only

SUPERBLOCK = 64 * 1024
PAGE = 4096


def fill(base: int, length: int, value: int):
    ctypes.memset(base, value, length)


@linux_only
class TestVirtualMemory:
    def setup_method(self):
        self.vm = VirtualMemory(SUPERBLOCK, PAGE, BackendKind.KEEP_RESIDENT)

    def test_reserve_superblock(self):
        first = self.vm.reserve_superblock()
        second = self.vm.reserve_superblock()
        assert first % SUPERBLOCK == 0
        assert second % SUPERBLOCK == 0
        assert abs(first - second) >= SUPERBLOCK
        assert load_byte(first) == 0
        assert load_byte(first + SUPERBLOCK - 1) == 0
        store_word(first + 8, 42)
        assert load_word(first + 8) == 42
        assert self.vm.range_state(first) is RangeState.MAPPED

    def test_reserve_large(self):
        base = self.vm.reserve_large(3 * SUPERBLOCK + 1)
        assert base % SUPERBLOCK == 0
        assert self.vm.large_length(3 * SUPERBLOCK + 1) == 3 * SUPERBLOCK + PAGE
        assert self.vm.ranges[base][0] == 3 * SUPERBLOCK + PAGE
        self.vm.release(base, 3 * SUPERBLOCK + 1)
        assert self.vm.range_state(base) is RangeState.UNMAPPED
        assert base not in self.vm.ranges

    def test_release_superblock(self):
        base = self.vm.reserve_superblock()
        self.vm.release_superblock(base)
        assert self.vm.range_state(base) is RangeState.UNMAPPED

    def test_ledger_drops_unmapped_ranges(self):
        bases = [self.vm.reserve_superblock() for _ in range(8)]
        for base in bases:
            self.vm.release_superblock(base)
        assert not set(bases) & set(self.vm.ranges)
        assert self.vm.range_state(bases[0]) is RangeState.UNMAPPED

    def test_release_failure(self):
        base = self.vm.reserve_superblock()
        with pytest.raises(VirtualMemoryException):
            self.vm.release(base + 1, PAGE)

    def test_reserve_failure(self):
        flexmock(self.vm).should_receive("_mmap").and_return(None)
        with pytest.raises(AllocationException):
            self.vm.reserve_superblock()

    def test_keep_resident_neutralize_is_noop(self):
        base = self.vm.reserve_superblock()
        fill(base, SUPERBLOCK, 0xAB)
        calls = self.vm.syscalls.load()
        self.vm.neutralize_superblock(base)
        assert self.vm.syscalls.load() == calls
        assert load_byte(base + 123) == 0xAB
        assert self.vm.range_state(base) is RangeState.MAPPED

    def test_advise_release_reads_zero(self):
        base = self.vm.reserve_superblock()
        fill(base, SUPERBLOCK, 0xCD)
        self.vm.neutralize_superblock(base, BackendKind.ADVISE_RELEASE)
        assert self.vm.range_state(base) is RangeState.NEUTRALIZED
        assert all(load_byte(base + offset) == 0 for offset in range(0, SUPERBLOCK, 512))
        calls = self.vm.syscalls.load()
        self.vm.rearm_superblock(base, BackendKind.ADVISE_RELEASE)
        assert self.vm.syscalls.load() == calls
        store_word(base, 7)
        assert load_word(base) == 7


@linux_only
@pytest.mark.skipif(
    not VirtualMemory.supports(BackendKind.SHARED_REMAP), reason="needs memfd_create"
)
class TestSharedRemap:
    def setup_method(self):
        self.vm = VirtualMemory(SUPERBLOCK, PAGE, BackendKind.SHARED_REMAP)

    def test_marker_visible_through_neutralized_superblocks(self):
        first = self.vm.reserve_superblock()
        second = self.vm.reserve_superblock()
        fill(first, SUPERBLOCK, 1)
        fill(second, SUPERBLOCK, 2)
        self.vm.neutralize_superblock(first)
        self.vm.neutralize_superblock(second)
        region = self.vm.shared_region()
        store_word(region.base + 64, 0xFEEDFACE)
        assert load_word(first + 64) == 0xFEEDFACE
        assert load_word(second + 64) == 0xFEEDFACE

    def test_syscalls_per_neutralize(self):
        vm = VirtualMemory(SUPERBLOCK, PAGE, BackendKind.SHARED_REMAP, 4 * PAGE)
        base = vm.reserve_superblock()
        vm.shared_region()
        calls = vm.syscalls.load()
        vm.neutralize_superblock(base)
        assert vm.syscalls.load() - calls == SUPERBLOCK // (4 * PAGE)
        store_word(vm.shared_region().base + 8, 99)
        # the region repeats over the whole superblock
        assert load_word(base + 4 * PAGE + 8) == 99
        calls = vm.syscalls.load()
        vm.rearm_superblock(base)
        assert vm.syscalls.load() - calls == 1

    def test_rearm_gives_private_zeroed_memory(self):
        first = self.vm.reserve_superblock()
        second = self.vm.reserve_superblock()
        self.vm.neutralize_superblock(first)
        self.vm.neutralize_superblock(second)
        self.vm.rearm_superblock(first)
        self.vm.rearm_superblock(second)
        assert self.vm.range_state(first) is RangeState.MAPPED
        assert load_word(first) == 0
        store_word(first, 1234)
        assert load_word(first) == 1234
        assert load_word(second) == 0

    def test_region_length_must_divide_superblock(self):
        with pytest.raises(ValueError):
            VirtualMemory(SUPERBLOCK, PAGE, BackendKind.SHARED_REMAP, 3 * PAGE)


def test_unsupported_backend_falls_back_to_keep():
    flexmock(VirtualMemory).should_receive("supports").and_return(False)
    vm = VirtualMemory(SUPERBLOCK, PAGE, BackendKind.ADVISE_RELEASE)
    assert vm.kind is BackendKind.KEEP_RESIDENT


def test_releases_memory():
    assert not BackendKind.KEEP_RESIDENT.releases_memory
    assert BackendKind.ADVISE_RELEASE.releases_memory
    assert BackendKind("shared") is BackendKind.SHARED_REMAP


@linux_only
@pytest.mark.timeout(30)
def test_resident_bytes_follow_touched_memory():
    vm = VirtualMemory(2 * 1024 * 1024, PAGE, BackendKind.ADVISE_RELEASE)
    bases = [vm.reserve_superblock() for _ in range(16)]
    before = vm.resident_bytes()
    assert before is not None
    for base in bases:
        fill(base, vm.superblock_size, 0x5A)
    touched = vm.resident_bytes() - before
    assert touched >= 24 * 1024 * 1024
    for base in bases:
        vm.neutralize_superblock(base)
    assert before + touched - vm.resident_bytes() >= 0.8 * touched


def test_resident_bytes_not_available():
    import psutil

    flexmock(psutil.Process).should_receive("memory_info").and_raise(psutil.Error)
    assert VirtualMemory.resident_bytes() is None
