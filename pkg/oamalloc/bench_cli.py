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
Benchmark harness: fixed-duration throughput runs of a lock-free list or
hash map under a mixed search/insert/remove workload, repeated and swept
over thread counts, with results written as CSV.
"""
import csv
import logging
import random
import threading
import time
from pathlib import Path
from sys import exit
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from oamalloc.alloc_api import Allocator
from oamalloc.cli import CLI
from oamalloc.configuration import STRUCTURES, Configuration, configuration
from oamalloc.exceptions import ConfigurationException
from oamalloc.lockfree_structures import LockFreeHashMap, LockFreeList
from oamalloc.oa_reclaim import ReclaimScheme, ReclamationDomain
from oamalloc.utils import parse_thread_sweep
from oamalloc.vm_backend import BackendKind, VirtualMemory

logger = logging.getLogger("oamalloc")

CSV_COLUMNS = [
    "structure",
    "scheme",
    "backend",
    "threads",
    "run",
    "ops",
    "seconds",
    "throughput",
    "warnings",
    "scans",
    "freed",
    "rss_peak",
    "final_size",
]
FLOAT_COLUMNS = ("seconds", "throughput")
RSS_SAMPLE_INTERVAL = 0.01


class WorkloadConfig:
    def __init__(
        self,
        structure: str = "map",
        prefill: int = 10000,
        search_pct: int = 50,
        insert_pct: int = 25,
        remove_pct: int = 25,
        threads: int = 1,
        duration: float = 1.0,
        runs: int = 10,
        scheme: Union[ReclaimScheme, str] = ReclaimScheme.VER,
        backend: Union[BackendKind, str] = BackendKind.KEEP_RESIDENT,
        seed: int = 0,
        warmup: float = 0.1,
        limbo_capacity: int = 64,
        scan_threshold: Optional[int] = None,
        hazard_slots: int = 3,
        ops_limit: Optional[int] = None,
    ):
        """
        :param ops_limit: stop each worker after this many operations even
                          before duration elapses; makes runs reproducible
        """
        self.structure = structure
        self.prefill = prefill
        self.search_pct = search_pct
        self.insert_pct = insert_pct
        self.remove_pct = remove_pct
        self.threads = threads
        self.duration = duration
        self.runs = runs
        self.scheme = ReclaimScheme(scheme)
        self.backend = BackendKind(backend)
        self.seed = seed
        self.warmup = warmup
        self.limbo_capacity = limbo_capacity
        self.scan_threshold = scan_threshold
        self.hazard_slots = hazard_slots
        self.ops_limit = ops_limit

    @classmethod
    def from_configuration(cls, conf: Configuration) -> "WorkloadConfig":
        try:
            return cls(
                structure=conf.structure,
                prefill=conf.prefill,
                search_pct=conf.search,
                insert_pct=conf.insert,
                remove_pct=conf.remove,
                threads=conf.threads,
                duration=conf.duration,
                runs=conf.runs,
                scheme=conf.scheme,
                backend=conf.backend,
                seed=conf.seed,
                warmup=conf.warmup,
                limbo_capacity=conf.limbo_capacity,
                scan_threshold=conf.scan_threshold,
                hazard_slots=conf.hazard_slots,
            )
        except ValueError as exc:
            raise ConfigurationException(str(exc))

    @property
    def key_range(self) -> int:
        return 2 * self.prefill

    def validate(self):
        """
        :raises ConfigurationException: on the first violated constraint
        """
        if self.structure not in STRUCTURES:
            raise ConfigurationException(f"Unknown structure {self.structure!r}")
        if self.prefill < 1:
            raise ConfigurationException("prefill must be positive")
        if min(self.search_pct, self.insert_pct, self.remove_pct) < 0:
            raise ConfigurationException("percentages must not be negative")
        if self.search_pct + self.insert_pct + self.remove_pct != 100:
            raise ConfigurationException("search, insert and remove must sum to 100")
        if self.insert_pct != self.remove_pct:
            raise ConfigurationException("insert and remove must be equal")
        if self.threads < 1:
            raise ConfigurationException("threads must be positive")
        if self.duration <= 0 or self.warmup < 0:
            raise ConfigurationException("duration must be positive")
        if self.runs < 1:
            raise ConfigurationException("runs must be positive")
        if self.limbo_capacity < 1:
            raise ConfigurationException("limbo capacity must be positive")
        threshold = self.scan_threshold
        if threshold is not None and not 0 <= threshold < self.limbo_capacity:
            raise ConfigurationException("scan threshold must be below limbo capacity")
        if self.hazard_slots < 3:
            raise ConfigurationException("list operations need at least 3 hazard slots")

    def copy(self, **changes) -> "WorkloadConfig":
        fresh = WorkloadConfig.__new__(WorkloadConfig)
        fresh.__dict__.update(self.__dict__)
        fresh.__dict__.update(changes)
        return fresh


class RunResult(NamedTuple):
    threads: int
    run: int
    ops: int
    seconds: float
    throughput: float
    per_thread_ops: Tuple[int, ...]
    warnings: int
    scans: int
    freed: int
    rss_peak: int
    final_size: int
    # (seconds since the timed phase started, resident bytes)
    rss_samples: Tuple[Tuple[float, int], ...] = ()


class RunReport:
    def __init__(self, config: WorkloadConfig):
        self.config = config
        self.runs: List[RunResult] = []

    def for_threads(self, threads: int) -> List[RunResult]:
        return [result for result in self.runs if result.threads == threads]

    def thread_counts(self) -> List[int]:
        return sorted({result.threads for result in self.runs})

    def throughput(self, threads: Optional[int] = None) -> Tuple[float, float]:
        """
        :param threads: thread count, the first one run if omitted
        :return: mean and standard deviation of operations per second
        """
        if threads is None:
            threads = self.thread_counts()[0]
        values = np.array([result.throughput for result in self.for_threads(threads)])
        return float(values.mean()), float(values.std())

    @property
    def warnings(self) -> int:
        return sum(result.warnings for result in self.runs)

    @property
    def scans(self) -> int:
        return sum(result.scans for result in self.runs)

    @property
    def freed(self) -> int:
        return sum(result.freed for result in self.runs)


def build_structure(cfg: WorkloadConfig, domain: ReclamationDomain):
    if cfg.structure == "list":
        return LockFreeList(domain)
    return LockFreeHashMap(domain, cfg.prefill)


def prefill_structure(structure, cfg: WorkloadConfig):
    """Insert uniformly random keys from the key range until prefill keys are in."""
    rng = random.Random(cfg.seed)
    inserted = 0
    while inserted < cfg.prefill:
        if structure.insert(rng.randrange(cfg.key_range)):
            inserted += 1


class _Worker(threading.Thread):
    def __init__(
        self,
        structure,
        cfg: WorkloadConfig,
        index: int,
        warm: threading.Event,
        start_line: threading.Barrier,
        stop: threading.Event,
    ):
        super().__init__(name=f"oamalloc-worker-{index}", daemon=True)
        self.structure = structure
        self.cfg = cfg
        self.index = index
        self.warm = warm
        self.start_line = start_line
        self.stop = stop
        self.ops = 0
        self.error: Optional[BaseException] = None

    def _loop(self, rng: random.Random, stop: threading.Event, limit=None) -> int:
        search = self.structure.search
        insert = self.structure.insert
        remove = self.structure.remove
        key_range = self.cfg.key_range
        search_below = self.cfg.search_pct
        insert_below = search_below + self.cfg.insert_pct
        ops = 0
        while not stop.is_set() and (limit is None or ops < limit):
            op = rng.randrange(100)
            key = rng.randrange(key_range)
            if op < search_below:
                search(key)
            elif op < insert_below:
                insert(key)
            else:
                remove(key)
            ops += 1
        return ops

    def run(self):
        try:
            if self.cfg.warmup:
                self._loop(random.Random(-1 - self.cfg.seed - self.index), self.warm)
            self.start_line.wait()
            rng = random.Random(self.cfg.seed + self.index)
            self.ops = self._loop(rng, self.stop, self.cfg.ops_limit)
        except threading.BrokenBarrierError:
            pass
        except Exception as exc:
            self.error = exc
            self.start_line.abort()
        finally:
            self.structure.domain.unregister_thread()
            self.structure.allocator.thread_exit()


def _run_once(
    cfg: WorkloadConfig, threads: int, run: int, allocator: Allocator
) -> RunResult:
    domain = ReclamationDomain(
        cfg.scheme,
        limbo_capacity=cfg.limbo_capacity,
        scan_threshold=cfg.scan_threshold,
        hazard_slots=cfg.hazard_slots,
        allocator=allocator,
    )
    structure = build_structure(cfg, domain)
    prefill_structure(structure, cfg)

    warm = threading.Event()
    start_line = threading.Barrier(threads + 1)
    stop = threading.Event()
    workers = [
        _Worker(structure, cfg, index, warm, start_line, stop)
        for index in range(threads)
    ]
    for worker in workers:
        worker.start()
    time.sleep(cfg.warmup)
    warm.set()
    try:
        start_line.wait()
    except threading.BrokenBarrierError:
        stop.set()
    started = time.monotonic()
    deadline = started + cfg.duration
    samples = []
    while not stop.is_set():
        now = time.monotonic()
        rss = VirtualMemory.resident_bytes()
        if rss is not None:
            samples.append((now - started, rss))
        if now >= deadline or all(not worker.is_alive() for worker in workers):
            stop.set()
        else:
            stop.wait(min(RSS_SAMPLE_INTERVAL, deadline - now))
    for worker in workers:
        worker.join()
    seconds = time.monotonic() - started
    for worker in workers:
        if worker.error is not None:
            raise worker.error

    per_thread = tuple(worker.ops for worker in workers)
    ops = sum(per_thread)
    stats = domain.stats()
    result = RunResult(
        threads=threads,
        run=run,
        ops=ops,
        seconds=seconds,
        throughput=ops / seconds,
        per_thread_ops=per_thread,
        warnings=stats.warnings,
        scans=stats.scans,
        freed=stats.freed,
        rss_peak=max((rss for _, rss in samples), default=0),
        final_size=len(structure),
        rss_samples=tuple(samples),
    )
    structure.destroy()
    domain.reclaim_all()
    domain.unregister_thread()
    return result


def run_benchmark(
    cfg: WorkloadConfig,
    thread_counts: Optional[Sequence[int]] = None,
    allocator: Optional[Allocator] = None,
) -> RunReport:
    """
    Run cfg.runs timed runs for every thread count
    :param cfg: WorkloadConfig
    :param thread_counts: thread counts to sweep, [cfg.threads] if omitted
    :param allocator: Allocator nodes come from, built for cfg.backend if omitted
    :return: RunReport
    """
    cfg.validate()
    if allocator is None:
        allocator = Allocator(
            backend=cfg.backend,
            superblock_size=configuration.superblock_size,
            max_class_size=configuration.max_class_size,
            cache_capacity=configuration.cache_capacity,
            flush_fraction=configuration.flush_fraction,
            shared_region_length=configuration.shared_region_length,
        )
    report = RunReport(cfg)
    for threads in thread_counts or [cfg.threads]:
        for run in range(cfg.runs):
            result = _run_once(cfg, threads, run, allocator)
            logger.debug(
                f"{cfg.structure}/{cfg.scheme.value} threads={threads} run={run}: "
                f"{result.throughput:.0f} ops/s, {result.warnings} warnings"
            )
            report.runs.append(result)
        mean, std = report.throughput(threads)
        logger.info(
            f"{cfg.structure} {cfg.scheme.value} {allocator.backend.value} "
            f"threads={threads}: {mean:.0f} ± {std:.0f} ops/s"
        )
    logger.debug(f"allocator stats: {allocator.stats()}")
    return report


def emit_csv(report: RunReport, path: Union[str, Path]):
    """
    Write one row per (threads, run)
    :raises OSError: when path cannot be written
    """
    cfg = report.config
    with open(path, "w", newline="") as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow(CSV_COLUMNS)
        for result in report.runs:
            writer.writerow(
                [
                    cfg.structure,
                    cfg.scheme.value,
                    cfg.backend.value,
                    result.threads,
                    result.run,
                    result.ops,
                    repr(result.seconds),
                    repr(result.throughput),
                    result.warnings,
                    result.scans,
                    result.freed,
                    result.rss_peak,
                    result.final_size,
                ]
            )
    logger.info(f"{len(report.runs)} rows written to {path}")


def read_csv(path: Union[str, Path]) -> List[Dict[str, Union[str, int, float]]]:
    rows = []
    with open(path, newline="") as csvfile:
        for row in csv.DictReader(csvfile):
            for key in CSV_COLUMNS[3:]:
                row[key] = float(row[key]) if key in FLOAT_COLUMNS else int(row[key])
            rows.append(row)
    return rows


def main(argv=None) -> int:
    try:
        args = CLI.parse_arguments(argv)
    except SystemExit as exc:
        return exc.code
    try:
        CLI.get_configuration(args)
        configuration.validate()
        cfg = WorkloadConfig.from_configuration(configuration)
        cfg.validate()
        if configuration.sweep:
            thread_counts = parse_thread_sweep(configuration.sweep)
        else:
            thread_counts = [cfg.threads]
    except ConfigurationException as exc:
        logger.error(exc)
        return 2
    logger.info(f"oamalloc-bench v{configuration.version}")
    report = run_benchmark(cfg, thread_counts)
    if configuration.csv:
        emit_csv(report, configuration.csv)
    return 0


if __name__ == "__main__":
    exit(main())
