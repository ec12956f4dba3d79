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
Optimistic Access reclamation on top of palloc().

Readers traverse without protection and validate afterwards by checking
for a warning; writers protect every node a compare-and-swap touches and
validate once. Reclaimers emit a warning, snapshot all hazard slots and
free the unprotected part of their limbo list. Two warning mechanisms
are provided: a warning bit per thread (BIT) and a monotonic global
clock whose concurrent increments coalesce (VER). NONE never frees.
"""
import logging
import threading
import weakref
from enum import Enum
from typing import Iterable, List, NamedTuple, Optional, Sequence

from oamalloc.alloc_api import Allocator, get_allocator
from oamalloc.atomics import AtomicArray, AtomicCell, LockFreeStack, memory_barrier

logger = logging.getLogger("oamalloc")

EMPTY_SLOT = 0


class ReclaimScheme(Enum):
    BIT = "bit"
    VER = "ver"
    NONE = "none"


class ProtectResult(Enum):
    VALID = "valid"
    MUST_RESTART = "must_restart"


class ReclaimStats(NamedTuple):
    retired: int
    freed: int
    limbo: int
    orphaned: int
    warnings: int
    scans: int
    freed_while_protected: int


class ThreadReclaimState:
    """
    Reclamation record of one thread. Everything except warning_bit is
    written by the owner only; hazard slots are read by every scanner.
    """

    def __init__(self, hazard_slots: int):
        self.in_use: AtomicCell[bool] = AtomicCell(True)
        self.owner = threading.get_ident()
        self.warning_bit: AtomicCell[bool] = AtomicCell(False)
        self.local_clock = 0
        self.last_retire_time = 0
        self.hazard_slots: AtomicArray[int] = AtomicArray(hazard_slots, EMPTY_SLOT)
        # slots whose protection passed validation, for the instrumented check
        self.validated: AtomicArray[bool] = AtomicArray(hazard_slots, False)
        self.limbo: List[int] = []
        self.retired = 0
        self.freed = 0
        self.scans = 0
        self.warnings = 0
        self.freed_while_protected = 0

    def __repr__(self):
        return (
            f"ThreadReclaimState(owner={self.owner}, limbo={len(self.limbo)}, "
            f"local_clock={self.local_clock}, last_retire={self.last_retire_time})"
        )


class _ThreadToken:
    """Lives in the owner's thread-local storage; collected when the thread ends."""


class ReclamationDomain:
    def __init__(
        self,
        scheme: ReclaimScheme = ReclaimScheme.VER,
        limbo_capacity: int = 64,
        scan_threshold: Optional[int] = None,
        hazard_slots: int = 3,
        allocator: Optional[Allocator] = None,
        audit: bool = False,
    ):
        """
        :param scheme: ReclaimScheme, fixed for the lifetime of the domain
        :param limbo_capacity: R, limbo size that triggers a warning
        :param scan_threshold: X, minimal limbo size for a scan under VER, R // 2 if omitted
        :param hazard_slots: K, hazard slots per thread
        :param allocator: Allocator nodes come from, the process-wide one if omitted
        :param audit: count nodes freed while a validated hazard slot held them
        """
        self.scheme = ReclaimScheme(scheme)
        self.limbo_capacity = limbo_capacity
        self.scan_threshold = (
            limbo_capacity // 2 if scan_threshold is None else scan_threshold
        )
        if not 0 <= self.scan_threshold < limbo_capacity:
            raise ValueError("scan_threshold must be below limbo_capacity")
        self.hazard_slot_count = hazard_slots
        self.allocator = allocator or get_allocator()
        self.audit = audit
        self.clock: AtomicCell[int] = AtomicCell(0)
        self._registry: LockFreeStack[ThreadReclaimState] = LockFreeStack()
        self._orphans: LockFreeStack[List[int]] = LockFreeStack()
        self._broadcasts = AtomicCell(0)
        self._local = threading.local()

    @classmethod
    def from_configuration(cls, conf, allocator: Optional[Allocator] = None, audit=False):
        return cls(
            scheme=ReclaimScheme(conf.scheme),
            limbo_capacity=conf.limbo_capacity,
            scan_threshold=conf.scan_threshold,
            hazard_slots=conf.hazard_slots,
            allocator=allocator,
            audit=audit,
        )

    # registration

    def threads(self) -> List[ThreadReclaimState]:
        """Every record ever registered, in registration order."""
        return list(reversed(list(self._registry)))

    def state(self) -> ThreadReclaimState:
        """Reclamation record of the calling thread, registered on first use."""
        state = getattr(self._local, "state", None)
        if state is None:
            state = self.register_thread()
        return state

    def register_thread(self) -> ThreadReclaimState:
        state = None
        for record in self.threads():
            if not record.in_use.load() and record.in_use.compare_and_swap(False, True):
                state = record
                state.owner = threading.get_ident()
                break
        if state is None:
            state = ThreadReclaimState(self.hazard_slot_count)
            self._registry.push(state)
        state.local_clock = self.clock.load()
        state.last_retire_time = state.local_clock
        state.warning_bit.store(False)
        token = _ThreadToken()
        self._local.state = state
        self._local.token = token
        self._local.release = weakref.finalize(token, self._release, state)
        return state

    def unregister_thread(self):
        """Leave the domain: hand the limbo over to the orphan list."""
        state = getattr(self._local, "state", None)
        if state is None:
            return
        release = self._local.release
        del self._local.state, self._local.token, self._local.release
        release()

    def _release(self, state: ThreadReclaimState):
        if not state.in_use.load():
            return
        self.unprotect_all(state)
        if state.limbo:
            self._orphans.push(state.limbo)
            logger.debug(f"{len(state.limbo)} retired nodes orphaned")
            state.limbo = []
        state.in_use.store(False)

    def _adopt_orphans(self, state: ThreadReclaimState):
        while True:
            orphan = self._orphans.pop()
            if orphan is None:
                return
            state.limbo.extend(orphan)

    # node allocation

    def allocate_node(self, size: int) -> int:
        """Without reclamation nodes are never freed and need not stay readable."""
        if self.scheme is ReclaimScheme.NONE:
            return self.allocator.malloc_(size)
        return self.allocator.palloc(size)

    def free_unpublished(self, node: int):
        """Free a node no other thread has ever seen."""
        self.allocator.free_(node)

    # reader side

    def check_warning(self, state: ThreadReclaimState) -> bool:
        """
        Report a warning emitted since the previous check, once
        :param state: record of the calling thread
        :return: True if reads made before this call may have seen freed memory
        """
        if self.scheme is ReclaimScheme.BIT:
            if state.warning_bit.load():
                state.warning_bit.store(False)
                return True
            return False
        if self.scheme is ReclaimScheme.VER:
            now = self.clock.load()
            if now > state.local_clock:
                state.local_clock = now
                return True
        return False

    def protect(self, state: ThreadReclaimState, slot: int, addr: int) -> ProtectResult:
        """
        Publish addr in a hazard slot and validate it with one warning check
        :param state: record of the calling thread
        :param slot: hazard slot index, below K
        :param addr: node address
        :return: ProtectResult.VALID if addr cannot be freed while the slot holds it
        """
        return self.protect_all(state, ((slot, addr),))

    def protect_all(
        self, state: ThreadReclaimState, slots: Iterable[Sequence[int]]
    ) -> ProtectResult:
        """
        Publish several (slot, address) pairs, then validate all of them
        with a single warning check
        """
        slots = list(slots)
        for slot, addr in slots:
            state.validated.store(slot, False)
            state.hazard_slots.store(slot, addr)
        memory_barrier()
        if self.check_warning(state):
            return ProtectResult.MUST_RESTART
        if self.audit:
            for slot, _ in slots:
                state.validated.store(slot, True)
        return ProtectResult.VALID

    def unprotect_all(self, state: ThreadReclaimState):
        for slot in range(len(state.hazard_slots)):
            state.validated.store(slot, False)
            state.hazard_slots.store(slot, EMPTY_SLOT)

    # reclaimer side

    def retire(self, state: ThreadReclaimState, node: int):
        """
        Hand an unlinked node over for reclamation
        :param state: record of the calling thread
        :param node: node address, unlinked and never retired before
        """
        if self.scheme is ReclaimScheme.BIT:
            self.retire_bit(state, node)
        elif self.scheme is ReclaimScheme.VER:
            self.retire_ver(state, node)

    def retire_bit(self, state: ThreadReclaimState, node: int):
        state.limbo.append(node)
        state.retired += 1
        if len(state.limbo) < self.limbo_capacity:
            return
        self._adopt_orphans(state)
        for record in self.threads():
            record.warning_bit.store(True)
        state.warnings += 1
        self._broadcasts.fetch_add()
        self._scan(state)

    def retire_ver(self, state: ThreadReclaimState, node: int):
        if (
            len(state.limbo) >= self.limbo_capacity
            and state.last_retire_time == state.local_clock
        ):
            if self.clock.compare_and_swap(state.local_clock, state.local_clock + 1):
                state.warnings += 1
            # a failed increment means another thread warned since: reuse it
            state.local_clock = self.clock.load()
        if (
            state.last_retire_time < state.local_clock
            and len(state.limbo) > self.scan_threshold
        ):
            self._scan(state)
        state.last_retire_time = state.local_clock
        state.limbo.append(node)
        state.retired += 1
        # orphans were retired before now; they wait for the next warning
        self._adopt_orphans(state)

    def hazard_snapshot(self) -> set:
        protected = set()
        for record in self.threads():
            for slot in range(len(record.hazard_slots)):
                addr = record.hazard_slots.load(slot)
                if addr != EMPTY_SLOT:
                    protected.add(addr)
        return protected

    def _validated_holder(self, node: int) -> bool:
        for record in self.threads():
            for slot in range(len(record.hazard_slots)):
                if (
                    record.validated.load(slot)
                    and record.hazard_slots.load(slot) == node
                ):
                    return True
        return False

    def _scan(self, state: ThreadReclaimState):
        memory_barrier()
        protected = self.hazard_snapshot()
        keep = []
        freed = 0
        for node in state.limbo:
            if node in protected:
                keep.append(node)
                continue
            if self.audit and self._validated_holder(node):
                state.freed_while_protected += 1
            self.allocator.free_(node)
            freed += 1
        state.limbo = keep
        state.freed += freed
        state.scans += 1
        logger.debug(f"scan freed {freed}, kept {len(keep)}")

    def reclaim_all(self):
        """
        Free every retired node no hazard slot holds. Only valid while no
        thread runs an operation on a structure of this domain.
        """
        state = self.state()
        self._adopt_orphans(state)
        for record in self.threads():
            if record is not state:
                state.limbo.extend(record.limbo)
                record.limbo = []
        self._scan(state)

    @property
    def warnings(self) -> int:
        """BIT broadcast rounds, or successful VER clock increments."""
        if self.scheme is ReclaimScheme.VER:
            return self.clock.load()
        return self._broadcasts.load()

    def stats(self) -> ReclaimStats:
        records = self.threads()
        return ReclaimStats(
            retired=sum(record.retired for record in records),
            freed=sum(record.freed for record in records),
            limbo=sum(len(record.limbo) for record in records),
            orphaned=sum(len(orphan) for orphan in self._orphans),
            warnings=self.warnings,
            scans=sum(record.scans for record in records),
            freed_while_protected=sum(
                record.freed_while_protected for record in records
            ),
        )
