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

"""Tests utility functions"""

from collections import Counter

import pytest

from oamalloc.exceptions import ConfigurationException
from oamalloc.utils import align_up, multiplicative_hash, parse_thread_sweep


def test_align_up():
    assert align_up(0, 4096) == 0
    assert align_up(1, 4096) == 4096
    assert align_up(4096, 4096) == 4096
    assert align_up(0x200001, 0x200000) == 0x400000


def test_multiplicative_hash():
    buckets = 13334
    assert all(0 <= multiplicative_hash(key, buckets) < buckets for key in range(-100, 100))
    assert multiplicative_hash(12345, buckets) == multiplicative_hash(12345, buckets)
    # sequential keys spread over the table
    load = Counter(multiplicative_hash(key, 1000) for key in range(10000))
    assert len(load) > 800
    assert max(load.values()) < 50


@pytest.mark.parametrize(
    "sweep, expected",
    [
        ("1..4", [1, 2, 3, 4]),
        ("1,2,4,8", [1, 2, 4, 8]),
        ("8, 1..3, 2", [1, 2, 3, 8]),
        ("16", [16]),
        (4, [4]),
    ],
)
def test_parse_thread_sweep(sweep, expected):
    assert parse_thread_sweep(sweep) == expected


@pytest.mark.parametrize("sweep", ["", "0", "4..1", "a..b", "1-4", "0..2"])
def test_parse_thread_sweep_invalid(sweep):
    with pytest.raises(ConfigurationException):
        parse_thread_sweep(sweep)
