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

"""Tests of the size-class table"""

import pytest

from oamalloc.atomics import WORD
from oamalloc.size_classes import LARGE_ALLOC, MAX_WASTE, SizeClassTable, build_classes

SUPERBLOCK = 2 * 1024 * 1024


@pytest.fixture
def table():
    return SizeClassTable(SUPERBLOCK, 4096, 16384)


def linear_scan(classes, request):
    for index, size in enumerate(classes):
        if size >= request:
            return index
    return LARGE_ALLOC


def test_build_classes():
    classes = build_classes(16384)
    assert classes[:11] == [16, 24, 32, 40, 48, 56, 64, 80, 96, 112, 128]
    assert classes[11:15] == [160, 192, 224, 256]
    assert classes[-1] == 16384
    assert len(classes) == 39


def test_class_for_size_edges(table):
    assert table.class_for_size(1) == 0
    assert table.class_for_size(16384) == len(table) - 1
    assert table.class_for_size(16385) == LARGE_ALLOC
    assert table.block_size(table.class_for_size(100)) == 112


@pytest.mark.parametrize("request_size", [0, -1])
def test_class_for_size_rejects(table, request_size):
    with pytest.raises(ValueError):
        table.class_for_size(request_size)


def test_class_for_size_matches_linear_scan(table):
    for request in range(1, 16385 + 64):
        assert table.class_for_size(request) == linear_scan(table.classes, request)


def test_explicit_table():
    table = SizeClassTable(SUPERBLOCK, 4096, 64, classes=[16, 24, 32, 48, 64])
    assert table.class_for_size(24) == 1
    assert table.class_for_size(25) == 2


def test_block_size(table):
    assert table.block_size(table.class_for_size(1)) >= 1
    assert table.block_size(len(table) - 1) == 16384
    sizes = [table.block_size(index) for index in range(len(table))]
    assert sizes == sorted(sizes)
    with pytest.raises(ValueError):
        table.block_size(len(table))
    with pytest.raises(ValueError):
        table.block_size(-1)


def test_blocks_per_superblock(table):
    assert table.blocks_per_superblock(table.class_for_size(64)) == 32768
    assert table.blocks_per_superblock(len(table) - 1) == 128
    for index in range(len(table)):
        assert (
            table.blocks_per_superblock(index) * table.block_size(index) <= SUPERBLOCK
        )


def test_waste_bound(table):
    for request in range(17, table.max_class_size + 1):
        waste = table.block_size(table.class_for_size(request)) - request
        assert table.waste_factor(request) <= MAX_WASTE or waste < WORD, request
    for request in range(26, table.max_class_size + 1):
        assert table.waste_factor(request) <= MAX_WASTE, request
    assert table.waste_factor(17) == 24 / 17


def test_alignment(table):
    assert table.alignment(table.class_for_size(112)) == 16
    assert table.alignment(table.class_for_size(160)) == 32
    assert table.alignment(table.class_for_size(24)) == 8
    assert table.alignment(len(table) - 1) == 16384
    for index in range(len(table)):
        assert table.alignment(index) >= WORD
        assert table.block_size(index) % table.alignment(index) == 0


@pytest.mark.parametrize(
    "classes",
    [[16, 16, 32], [32, 16], [16, 32], [4, 32], [16, 20, 32]],
    ids=["duplicate", "decreasing", "short", "tiny", "unaligned"],
)
def test_invalid_tables(classes):
    with pytest.raises(ValueError):
        SizeClassTable(SUPERBLOCK, 4096, 32 if classes != [16, 32] else 64, classes)


def test_superblock_not_page_multiple():
    with pytest.raises(ValueError):
        SizeClassTable(4096 + 16, 4096, 16)
