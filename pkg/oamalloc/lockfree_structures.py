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
Harris-Michael lock-free sorted list and Michael's lock-free hash table
over raw nodes, written for optimistic access: traversals read a node and
then check for a warning, restarting from the head when one arrived;
every compare-and-swap is preceded by protecting the nodes it touches.
"""
import ctypes
import logging
import math
from typing import Iterator, List, NamedTuple, Tuple

from oamalloc.atomics import (
    WORD,
    cas_word,
    load_signed,
    load_word,
    store_signed,
    store_word,
)
from oamalloc.oa_reclaim import ProtectResult, ReclamationDomain, ThreadReclaimState
from oamalloc.utils import multiplicative_hash

logger = logging.getLogger("oamalloc")

# node layout
KEY_OFFSET = 0
VALUE_OFFSET = 8
NEXT_OFFSET = 16
NODE_SIZE = 24

# low bit of a next word: the node owning it is logically deleted
MARK = 1
NULL = 0

LOAD_FACTOR = 0.75

PREV_SLOT, CURR_SLOT, NEXT_SLOT = 0, 1, 2


class Position(NamedTuple):
    # word holding the link to curr: a head word or the next word of prev
    prev_link: int
    prev_node: int
    curr: int
    curr_key: int
    curr_next: int


class _OptimisticList:
    """Operations on sorted lists identified by the address of their head word."""

    def __init__(self, domain: ReclamationDomain):
        self.domain = domain
        self.allocator = domain.allocator

    def _allocate_heads(self, count: int) -> int:
        base = self.allocator.malloc_(count * WORD)
        ctypes.memset(base, 0, count * WORD)
        return base

    def _find(self, state: ThreadReclaimState, head: int, key: int) -> Position:
        """
        Position of the first unmarked node with a key not below key,
        unlinking the marked nodes passed on the way
        """
        domain = self.domain
        while True:
            prev_link, prev_node = head, NULL
            curr = load_word(head)
            while True:
                if curr == NULL:
                    return Position(prev_link, prev_node, NULL, 0, NULL)
                curr_next = load_word(curr + NEXT_OFFSET)
                curr_key = load_signed(curr + KEY_OFFSET)
                if domain.check_warning(state):
                    break
                if curr_next & MARK:
                    succ = curr_next & ~MARK
                    result = domain.protect_all(
                        state,
                        ((PREV_SLOT, prev_node), (CURR_SLOT, curr), (NEXT_SLOT, succ)),
                    )
                    if result is ProtectResult.MUST_RESTART:
                        break
                    if not cas_word(prev_link, curr, succ):
                        break
                    curr = succ
                    continue
                if curr_key >= key:
                    return Position(prev_link, prev_node, curr, curr_key, curr_next)
                prev_link, prev_node = curr + NEXT_OFFSET, curr
                curr = curr_next

    def _search(self, head: int, key: int) -> bool:
        domain = self.domain
        state = domain.state()
        while True:
            curr = load_word(head)
            while curr != NULL:
                curr_next = load_word(curr + NEXT_OFFSET)
                curr_key = load_signed(curr + KEY_OFFSET)
                if domain.check_warning(state):
                    break
                if curr_key >= key:
                    return curr_key == key and not curr_next & MARK
                curr = curr_next & ~MARK
            else:
                return False

    def _insert(self, head: int, key: int, value: int) -> bool:
        domain = self.domain
        state = domain.state()
        node = domain.allocate_node(NODE_SIZE)
        store_signed(node + KEY_OFFSET, key)
        store_signed(node + VALUE_OFFSET, value)
        try:
            while True:
                pos = self._find(state, head, key)
                if pos.curr != NULL and pos.curr_key == key:
                    domain.free_unpublished(node)
                    return False
                store_word(node + NEXT_OFFSET, pos.curr)
                result = domain.protect_all(
                    state, ((PREV_SLOT, pos.prev_node), (CURR_SLOT, pos.curr))
                )
                if result is ProtectResult.MUST_RESTART:
                    continue
                if cas_word(pos.prev_link, pos.curr, node):
                    return True
        finally:
            domain.unprotect_all(state)

    def _remove(self, head: int, key: int) -> bool:
        domain = self.domain
        state = domain.state()
        try:
            while True:
                pos = self._find(state, head, key)
                if pos.curr == NULL or pos.curr_key != key:
                    return False
                result = domain.protect_all(
                    state,
                    (
                        (PREV_SLOT, pos.prev_node),
                        (CURR_SLOT, pos.curr),
                        (NEXT_SLOT, pos.curr_next),
                    ),
                )
                if result is ProtectResult.MUST_RESTART:
                    continue
                if not cas_word(
                    pos.curr + NEXT_OFFSET, pos.curr_next, pos.curr_next | MARK
                ):
                    continue
                # the thread that marked the node unlinks and retires it
                if not cas_word(pos.prev_link, pos.curr, pos.curr_next):
                    self._find(state, head, key)
                domain.retire(state, pos.curr)
                return True
        finally:
            domain.unprotect_all(state)

    @staticmethod
    def _walk(head: int) -> Iterator[Tuple[int, int, bool]]:
        """(key, value, marked) of every linked node. Quiescent use only."""
        curr = load_word(head)
        while curr != NULL:
            curr_next = load_word(curr + NEXT_OFFSET)
            yield (
                load_signed(curr + KEY_OFFSET),
                load_signed(curr + VALUE_OFFSET),
                bool(curr_next & MARK),
            )
            curr = curr_next & ~MARK

    def _free_nodes(self, head: int):
        curr = load_word(head)
        while curr != NULL:
            curr_next = load_word(curr + NEXT_OFFSET) & ~MARK
            self.allocator.free_(curr)
            curr = curr_next
        store_word(head, NULL)


class LockFreeList(_OptimisticList):
    def __init__(self, domain: ReclamationDomain):
        """
        :param domain: ReclamationDomain removed nodes are retired to
        """
        super().__init__(domain)
        self.head = self._allocate_heads(1)

    def list_search(self, key: int) -> bool:
        return self._search(self.head, key)

    def list_insert(self, key: int, value: int = 0) -> bool:
        """
        :return: False if key is already present
        """
        return self._insert(self.head, key, value)

    def list_remove(self, key: int) -> bool:
        """
        :return: False if key is absent
        """
        return self._remove(self.head, key)

    search = list_search
    insert = list_insert
    remove = list_remove

    def items(self) -> List[Tuple[int, int]]:
        return [(key, value) for key, value, marked in self._walk(self.head) if not marked]

    def keys(self) -> List[int]:
        return [key for key, _ in self.items()]

    def __len__(self):
        return len(self.items())

    def is_sorted(self) -> bool:
        keys = [key for key, _, _ in self._walk(self.head)]
        return all(a < b for a, b in zip(keys, keys[1:]))

    def destroy(self):
        """Free every node and the head. Quiescent use only."""
        self._free_nodes(self.head)
        self.allocator.free_(self.head)
        self.head = NULL


class LockFreeHashMap(_OptimisticList):
    def __init__(self, domain: ReclamationDomain, expected_size: int):
        """
        Fixed-size table of sorted bucket lists
        :param domain: ReclamationDomain removed nodes are retired to
        :param expected_size: number of keys giving a load factor of 0.75
        """
        super().__init__(domain)
        self.bucket_count = max(1, math.ceil(expected_size / LOAD_FACTOR))
        self.buckets = self._allocate_heads(self.bucket_count)
        logger.debug(f"hash map with {self.bucket_count} buckets")

    def bucket_head(self, key: int) -> int:
        return self.buckets + multiplicative_hash(key, self.bucket_count) * WORD

    def map_search(self, key: int) -> bool:
        return self._search(self.bucket_head(key), key)

    def map_insert(self, key: int, value: int = 0) -> bool:
        return self._insert(self.bucket_head(key), key, value)

    def map_remove(self, key: int) -> bool:
        return self._remove(self.bucket_head(key), key)

    # uniform names shared with LockFreeList
    search = map_search
    insert = map_insert
    remove = map_remove

    def _heads(self) -> Iterator[int]:
        return (self.buckets + index * WORD for index in range(self.bucket_count))

    def items(self) -> List[Tuple[int, int]]:
        return sorted(
            (key, value)
            for head in self._heads()
            for key, value, marked in self._walk(head)
            if not marked
        )

    def keys(self) -> List[int]:
        return [key for key, _ in self.items()]

    def __len__(self):
        return len(self.items())

    def is_sorted(self) -> bool:
        for head in self._heads():
            keys = [key for key, _, _ in self._walk(head)]
            if any(a >= b for a, b in zip(keys, keys[1:])):
                return False
        return True

    def destroy(self):
        """Free every node and the bucket array. Quiescent use only."""
        for head in self._heads():
            self._free_nodes(head)
        self.allocator.free_(self.buckets)
        self.buckets = NULL
