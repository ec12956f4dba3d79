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
Size-class table: the mapping from request sizes to class indices and the
geometry of blocks inside a superblock.
"""
import bisect
from typing import Iterable, List, Optional

from oamalloc.atomics import WORD

# returned by class_for_size for requests above the largest class
LARGE_ALLOC = -1

QUANTUM = 16
STEPS_PER_DOUBLING = 4
# worst block_size / request above the word-granular small classes
MAX_WASTE = 1.25


def build_classes(max_class_size: int) -> List[int]:
    """
    Word-spaced classes up to 64 bytes, quantum-spaced classes up to 128
    bytes, then four classes per doubling. From 26 bytes on no request
    wastes more than 25% of its block; below that the waste is under one word.

    :param max_class_size: size of the largest class, a power of two
    :return: strictly increasing list of block sizes
    """
    classes = list(range(QUANTUM, 4 * QUANTUM + 1, WORD))
    classes.extend(range(5 * QUANTUM, 8 * QUANTUM + 1, QUANTUM))
    base = 8 * QUANTUM
    while base < max_class_size:
        step = base // STEPS_PER_DOUBLING
        classes.extend(base + step * i for i in range(1, STEPS_PER_DOUBLING + 1))
        base *= 2
    return [size for size in classes if size <= max_class_size]


class SizeClassTable:
    def __init__(
        self,
        superblock_size: int,
        page_size: int,
        max_class_size: int,
        classes: Optional[Iterable[int]] = None,
    ):
        """
        :param superblock_size: bytes, a multiple of page_size
        :param page_size: bytes
        :param max_class_size: bytes, the last class
        :param classes: explicit table, built with build_classes() if omitted
        """
        self.superblock_size = superblock_size
        self.page_size = page_size
        self.max_class_size = max_class_size
        self.classes = list(classes) if classes is not None else build_classes(
            max_class_size
        )
        if superblock_size % page_size:
            raise ValueError("superblock_size must be a multiple of page_size")
        if any(a >= b for a, b in zip(self.classes, self.classes[1:])):
            raise ValueError("size classes must be strictly increasing")
        if not self.classes or self.classes[-1] != max_class_size:
            raise ValueError("the last size class must equal max_class_size")
        if self.classes[0] < WORD:
            raise ValueError(f"size classes must hold at least {WORD} bytes")
        if any(size % WORD for size in self.classes):
            raise ValueError(f"size classes must be multiples of {WORD} bytes")

    def __len__(self):
        return len(self.classes)

    def class_for_size(self, request: int) -> int:
        """
        Smallest class whose blocks hold request bytes
        :param request: bytes, at least 1
        :return: class index, or LARGE_ALLOC above max_class_size
        """
        if request < 1:
            raise ValueError(f"Cannot allocate {request} bytes")
        if request > self.max_class_size:
            return LARGE_ALLOC
        return bisect.bisect_left(self.classes, request)

    def block_size(self, size_class: int) -> int:
        if not 0 <= size_class < len(self.classes):
            raise ValueError(f"No size class {size_class}")
        return self.classes[size_class]

    def blocks_per_superblock(self, size_class: int) -> int:
        return self.superblock_size // self.block_size(size_class)

    def alignment(self, size_class: int) -> int:
        """
        Largest power of two dividing the block size. Blocks are packed from
        a superblock-aligned base, so every block address is a multiple of it.
        """
        size = self.block_size(size_class)
        return size & -size

    def waste_factor(self, request: int) -> float:
        size_class = self.class_for_size(request)
        return self.block_size(size_class) / request
