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

import logging
import re
from typing import List

from oamalloc.exceptions import ConfigurationException

logger = logging.getLogger("oamalloc")

# 2^64 / golden ratio, odd
FIBONACCI_MULTIPLIER = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


def align_up(value: int, alignment: int) -> int:
    """
    Round value up to a multiple of alignment
    :param value: int
    :param alignment: int, a power of two
    :return: int
    """
    return (value + alignment - 1) & ~(alignment - 1)


def multiplicative_hash(key: int, buckets: int) -> int:
    """
    Fibonacci hashing of an integer key
    :param key: int
    :param buckets: number of buckets
    :return: bucket index in [0, buckets)
    """
    mixed = ((key & MASK64) * FIBONACCI_MULTIPLIER) & MASK64
    return (mixed >> 32) % buckets


def parse_thread_sweep(sweep: str) -> List[int]:
    """
    Parse a thread sweep given as "1..32", "1,2,4,8" or a mix of both
    :param sweep: str
    :return: sorted list of distinct positive thread counts
    """
    counts = set()
    for part in str(sweep).split(","):
        part = part.strip()
        if not part:
            continue
        re_match = re.fullmatch(r"(\d+)\s*\.\.\s*(\d+)", part)
        if re_match:
            low, high = int(re_match[1]), int(re_match[2])
            if low > high:
                raise ConfigurationException(f"Empty thread sweep {part!r}")
            counts.update(range(low, high + 1))
        elif part.isdigit():
            counts.add(int(part))
        else:
            raise ConfigurationException(f"Cannot parse thread sweep {part!r}")
    if not counts or min(counts) < 1:
        raise ConfigurationException(f"Thread sweep {sweep!r} has no positive counts")
    return sorted(counts)
