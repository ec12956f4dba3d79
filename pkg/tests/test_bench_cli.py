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

"""Tests of the benchmark harness and its command line"""

import csv

import pytest
from flexmock import flexmock

from oamalloc import bench_cli
from oamalloc.bench_cli import (
    CSV_COLUMNS,
    RunReport,
    RunResult,
    WorkloadConfig,
    emit_csv,
    main,
    read_csv,
    run_benchmark,
)
from oamalloc.configuration import configuration
from oamalloc.exceptions import ConfigurationException
from oamalloc.oa_reclaim import ReclaimScheme
from oamalloc.vm_backend import BackendKind


def small_workload(**changes) -> WorkloadConfig:
    cfg = WorkloadConfig(
        structure="list",
        prefill=64,
        threads=2,
        duration=0.05,
        runs=2,
        warmup=0,
        limbo_capacity=8,
    )
    return cfg.copy(**changes)


class TestWorkloadConfig:
    def test_defaults_are_valid(self):
        cfg = WorkloadConfig()
        cfg.validate()
        assert cfg.scheme is ReclaimScheme.VER
        assert cfg.backend is BackendKind.KEEP_RESIDENT
        assert cfg.key_range == 20000

    @pytest.mark.parametrize(
        "changes",
        [
            {"structure": "tree"},
            {"prefill": 0},
            {"search_pct": 40},
            {"search_pct": 60, "insert_pct": 30, "remove_pct": 10},
            {"search_pct": 120, "insert_pct": -10, "remove_pct": -10},
            {"threads": 0},
            {"duration": 0},
            {"runs": 0},
            {"limbo_capacity": 0},
            {"scan_threshold": 64},
            {"hazard_slots": 2},
        ],
    )
    def test_invalid(self, changes):
        with pytest.raises(ConfigurationException):
            WorkloadConfig().copy(**changes).validate()

    def test_copy_leaves_the_original(self):
        cfg = WorkloadConfig()
        other = cfg.copy(threads=8)
        assert other.threads == 8
        assert cfg.threads == 1

    def test_from_configuration_rejects_unknown_scheme(self):
        conf = flexmock(
            structure="map",
            prefill=10,
            search=50,
            insert=25,
            remove=25,
            threads=1,
            duration=1.0,
            runs=1,
            scheme="epoch",
            backend="keep",
            seed=0,
            warmup=0,
            limbo_capacity=64,
            scan_threshold=None,
            hazard_slots=3,
        )
        with pytest.raises(ConfigurationException):
            WorkloadConfig.from_configuration(conf)


def test_report_statistics():
    cfg = WorkloadConfig()
    report = RunReport(cfg)
    for run, throughput in enumerate((100.0, 300.0)):
        report.runs.append(
            RunResult(
                threads=2,
                run=run,
                ops=int(throughput),
                seconds=1.0,
                throughput=throughput,
                per_thread_ops=(50, 50),
                warnings=3,
                scans=4,
                freed=5,
                rss_peak=0,
                final_size=10,
            )
        )
    assert report.thread_counts() == [2]
    assert report.throughput() == (200.0, 100.0)
    assert (report.warnings, report.scans, report.freed) == (6, 8, 10)


@pytest.mark.timeout(120)
class TestRunBenchmark:
    @pytest.mark.parametrize("structure", ["list", "map"])
    def test_small_run(self, allocator, structure):
        cfg = small_workload(structure=structure)
        report = run_benchmark(cfg, allocator=allocator)
        assert len(report.runs) == 2
        for result in report.runs:
            assert result.threads == 2
            assert result.ops == sum(result.per_thread_ops) > 0
            assert result.throughput > 0
            # inserts and removes balance around the prefill
            assert 0 < result.final_size <= cfg.key_range
        mean, _ = report.throughput()
        assert mean > 0
        assert allocator.audit(live=[]) == []

    def test_sweep_rows(self, allocator, tmp_path):
        cfg = small_workload(scheme=ReclaimScheme.BIT)
        report = run_benchmark(cfg, thread_counts=[1, 2], allocator=allocator)
        path = tmp_path / "results.csv"
        emit_csv(report, path)
        with open(path, newline="") as csvfile:
            assert next(csv.reader(csvfile)) == CSV_COLUMNS
        rows = read_csv(path)
        assert [(row["threads"], row["run"]) for row in rows] == [
            (1, 0),
            (1, 1),
            (2, 0),
            (2, 1),
        ]
        assert {row["scheme"] for row in rows} == {"bit"}
        assert {row["structure"] for row in rows} == {"list"}
        assert rows[0]["throughput"] == report.runs[0].throughput

    def test_deterministic_with_ops_limit(self, allocator):
        cfg = small_workload(threads=1, runs=1, duration=30, ops_limit=2000, seed=5)
        first = run_benchmark(cfg, allocator=allocator).runs[0]
        second = run_benchmark(cfg, allocator=allocator).runs[0]
        assert first.ops == second.ops == 2000
        assert first.final_size == second.final_size
        assert first.freed == second.freed
        assert first.warnings == second.warnings

    def test_none_scheme_frees_nothing(self, allocator):
        cfg = small_workload(scheme=ReclaimScheme.NONE, runs=1)
        result = run_benchmark(cfg, allocator=allocator).runs[0]
        assert result.freed == 0
        assert result.warnings == 0

    def test_worker_error_is_raised(self, allocator):
        flexmock(bench_cli.LockFreeList).should_receive("search").and_raise(
            RuntimeError("boom")
        )
        cfg = small_workload(search_pct=100, insert_pct=0, remove_pct=0, runs=1)
        with pytest.raises(RuntimeError, match="boom"):
            run_benchmark(cfg, allocator=allocator)


class TestMain:
    def setup_method(self):
        self.saved = dict(configuration.__dict__)

    def teardown_method(self, method):
        configuration.__dict__.clear()
        configuration.__dict__.update(self.saved)
        configuration.logger.setLevel(20)

    @pytest.mark.parametrize(
        "argv",
        [
            ["--bogus"],
            ["--structure", "tree"],
            ["--threads", "1", "--sweep", "1..2"],
            ["--insert", "30"],
            ["--scheme", "ver", "--limbo-capacity", "4", "--scan-threshold", "4"],
            ["--sweep", "4..1"],
            ["-c", "/nonexistent/conf.yaml"],
        ],
    )
    def test_usage_errors(self, argv, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(argv) == 2

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert "oamalloc-bench" in capsys.readouterr().out

    @pytest.mark.timeout(120)
    def test_run_writes_csv(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        path = tmp_path / "out.csv"
        argv = [
            "--structure",
            "list",
            "--prefill",
            "50",
            "--duration",
            "0.02",
            "--runs",
            "1",
            "--warmup",
            "0",
            "--sweep",
            "1,2",
            "--scheme",
            "bit",
            "--csv",
            str(path),
        ]
        assert main(argv) == 0
        rows = read_csv(path)
        assert [row["threads"] for row in rows] == [1, 2]
        assert all(row["ops"] > 0 for row in rows)

    def test_configuration_file_and_override(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        conf_file = tmp_path / "bench.yaml"
        conf_file.write_text("scheme: bit\nstructure: list\nprefill: 20\nruns: 1\n")
        captured = {}

        def fake_run(cfg, thread_counts):
            captured["cfg"], captured["threads"] = cfg, thread_counts
            return RunReport(cfg)

        flexmock(bench_cli).should_receive("run_benchmark").replace_with(fake_run)
        assert main(["-c", str(conf_file), "--prefill", "40", "--threads", "3"]) == 0
        cfg = captured["cfg"]
        assert cfg.scheme is ReclaimScheme.BIT
        assert cfg.structure == "list"
        assert cfg.prefill == 40
        assert captured["threads"] == [3]
