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
Atomic building blocks shared by the allocator and the reclamation layer.

CPython exposes no hardware compare-and-swap, so every compare-and-swap
below is a short critical section guarding exactly one word. All
algorithms built on top are written as CAS retry loops, never holding a
lock across more than one word.
"""
import ctypes
import threading
from typing import Any, Generic, Iterator, List, Optional, TypeVar

T = TypeVar("T")

WORD = ctypes.sizeof(ctypes.c_uint64)
_STRIPES = 256
_word_locks = [threading.Lock() for _ in range(_STRIPES)]
_fence = threading.Lock()


def memory_barrier():
    """Full ordering barrier: lock acquire/release orders all loads and stores."""
    with _fence:
        pass


def _stripe(key: int) -> threading.Lock:
    return _word_locks[(key >> 3) % _STRIPES]


def load_word(addr: int) -> int:
    return ctypes.c_uint64.from_address(addr).value


def load_signed(addr: int) -> int:
    return ctypes.c_int64.from_address(addr).value


def store_word(addr: int, value: int):
    ctypes.c_uint64.from_address(addr).value = value


def store_signed(addr: int, value: int):
    ctypes.c_int64.from_address(addr).value = value


def load_byte(addr: int) -> int:
    return ctypes.c_uint8.from_address(addr).value


def cas_word(addr: int, expected: int, new: int) -> bool:
    """
    Compare-and-swap one aligned 64-bit word of raw memory
    :param addr: word address
    :param expected: value the word must hold
    :param new: value to install
    :return: True if the word held expected and now holds new
    """
    cell = ctypes.c_uint64.from_address(addr)
    with _stripe(addr):
        if cell.value != expected:
            return False
        cell.value = new
        return True


class AtomicCell(Generic[T]):
    """A single Python value updated only by atomic operations."""

    __slots__ = ("_value", "_lock")

    def __init__(self, value: T):
        self._value = value
        self._lock = threading.Lock()

    def __repr__(self):
        return f"AtomicCell({self._value!r})"

    def load(self) -> T:
        return self._value

    def store(self, value: T):
        with self._lock:
            self._value = value

    def exchange(self, value: T) -> T:
        with self._lock:
            old, self._value = self._value, value
            return old

    def compare_and_swap(self, expected: T, new: T) -> bool:
        with self._lock:
            if self._value is not expected and self._value != expected:
                return False
            self._value = new
            return True

    def fetch_add(self, delta: int = 1) -> int:
        with self._lock:
            old = self._value
            self._value = old + delta
            return old


class AtomicArray(Generic[T]):
    """Fixed-length array of atomically published slots."""

    def __init__(self, length: int, initial: Optional[T] = None):
        self._items: List[Optional[T]] = [initial] * length

    def __len__(self):
        return len(self._items)

    def load(self, index: int) -> Optional[T]:
        return self._items[index]

    def store(self, index: int, value: Optional[T]):
        with _stripe(index << 3):
            self._items[index] = value

    def compare_and_swap(self, index: int, expected: Optional[T], new: Optional[T]):
        with _stripe(index << 3):
            if self._items[index] is not expected:
                return False
            self._items[index] = new
            return True


class _Link:
    __slots__ = ("item", "next")

    def __init__(self, item: Any, next_link: Optional["_Link"]):
        self.item = item
        self.next = next_link


class LockFreeStack(Generic[T]):
    """
    Treiber stack. Links are immutable and garbage collected, so a link
    address is never reused while a popper still holds it and the head
    needs no ABA tag.
    """

    def __init__(self):
        self._head: AtomicCell[Optional[_Link]] = AtomicCell(None)

    def push(self, item: T):
        while True:
            head = self._head.load()
            if self._head.compare_and_swap(head, _Link(item, head)):
                return

    def pop(self) -> Optional[T]:
        while True:
            head = self._head.load()
            if head is None:
                return None
            if self._head.compare_and_swap(head, head.next):
                return head.item

    def is_empty(self) -> bool:
        return self._head.load() is None

    def __iter__(self) -> Iterator[T]:
        link = self._head.load()
        while link is not None:
            yield link.item
            link = link.next

    def __len__(self):
        return sum(1 for _ in self)
