"""Tests for the benchmark drivers on a desk-sized corpus."""

import threading

import numpy as np
import pytest

from sas_kit.benches import (
    AblationBench,
    BenchReport,
    BenchRow,
    BenchStatus,
    DriftBench,
    parse_variant,
    run_ablation,
    run_bfs_vs_spectral,
    run_complexity_bench,
    run_drift_bench,
    run_invariance_bench,
)
from sas_kit.benches.ablation import ordering_failures
from sas_kit.benches.base import judge, run_cells
from sas_kit.benches.bfs_spectral import bfs_spectral_failures
from sas_kit.benches.drift import drift_trend_failures
from sas_kit.errors import BenchAssertionError, DegenerateInputError


def values(report: BenchReport) -> list[tuple]:
    return [(*r.key, r.value) for r in report.rows]


class TestBenchTypes:
    """Test rows, reports and judging."""

    def test_non_finite_row(self):
        with pytest.raises(BenchAssertionError):
            BenchRow("s", "sas", "none", "topo_npr", float("nan"))

    def test_means_per_strategy_and_metric(self):
        report = BenchReport("x", rows=[
            BenchRow("b", "sas", "none", "topo_npr", 0.5),
            BenchRow("a", "sas", "none", "topo_npr", 1.0),
            BenchRow("a", "zorder", "none", "topo_npr", 0.25),
        ])
        assert report.means() == {"sas": {"topo_npr": 0.75}, "zorder": {"topo_npr": 0.25}}
        assert [r.shape_id for r in report.sorted_rows()] == ["a", "a", "b"]

    def test_empty_report_means(self):
        assert BenchReport("x").means() == {}

    def test_judge(self):
        report = BenchReport("x")
        assert judge("x", report, ["broken"], [], "ok").status == BenchStatus.FAIL
        warned = judge("x", report, [], ["slow"], "ok")
        assert warned.status == BenchStatus.WARN
        assert warned.passed
        assert judge("x", report, [], [], "ok").status == BenchStatus.PASS

    def test_run_cells_keeps_order(self):
        ticks = []
        lock = threading.Lock()

        def tick():
            with lock:
                ticks.append(1)

        assert run_cells(lambda x: x * x, range(20), workers=4, on_done=tick) == [x * x for x in range(20)]
        assert len(ticks) == 20


class TestParseVariant:
    """Test ablation variant names."""

    def test_named_variants(self, small_config):
        assert parse_variant("concat_hdm", small_config).fusion_mode == "concat"
        assert parse_variant("no_gcs", small_config).order_variant == "no_gcs"
        assert parse_variant("sga_on", small_config).alignment.mode == "adaptive_cosine"
        assert parse_variant("sga_off", small_config).alignment is None

    def test_parametric_variants(self, small_config):
        assert parse_variant("fixed_alpha(0.3)", small_config).alignment.alpha == 0.3
        assert parse_variant("fixed_kernel(0.1)", small_config).kernel_scale == 0.1

    @pytest.mark.parametrize("name", ["fixed_alpha(1.5)", "fixed_kernel(0)", "octree"])
    def test_rejected(self, small_config, name):
        with pytest.raises(DegenerateInputError):
            parse_variant(name, small_config)


class TestTrendChecks:
    """Test the expected-ordering checks."""

    def test_drift_fails_when_sas_does_not_lead(self):
        means = {"sas": {"topo_npr": 0.5, "geo_npr": 0.9}, "zorder": {"topo_npr": 0.6, "geo_npr": 0.1}}
        failures = drift_trend_failures(means)
        assert len(failures) == 1
        assert "topo_npr" in failures[0]

    def test_bfs_spectral_fails_on_slow_spectral(self):
        summary = {
            "metric": "npr_bfs_r2",
            "means": {"cds_bfs": {"npr_bfs_r2": 1.0}, "cds_spectral": {"npr_bfs_r2": 0.9}},
            "elapsed_ms": {"cds_bfs": 10.0, "cds_spectral": 12.0},
        }
        failures = bfs_spectral_failures(summary)
        assert len(failures) == 1
        assert "spectral CDS took" in failures[0]
        summary["elapsed_ms"]["cds_spectral"] = 4.0
        assert bfs_spectral_failures(summary) == []

    def test_bfs_spectral_fails_below_npr_bar(self):
        summary = {
            "metric": "npr_bfs_r2",
            "means": {"cds_bfs": {"npr_bfs_r2": 1.0}, "cds_spectral": {"npr_bfs_r2": 0.8}},
            "elapsed_ms": {"cds_bfs": 10.0, "cds_spectral": 1.0},
        }
        assert bfs_spectral_failures(summary) == ["spectral mean NPR 0.8000 below 0.85"]

    def test_ablation_orderings(self):
        means = {
            "interleave_hdm": {"eval_loss": 1.0, "train_loss_initial": 2.0, "train_loss_final": 1.0},
            "zorder": {"eval_loss": 1.0},
            "concat_hdm": {"eval_loss": 1.0},
        }
        failures = ordering_failures(means)
        assert len(failures) == 1
        assert "zorder" in failures[0]

    def test_ablation_training_reduction(self):
        means = {"interleave_hdm": {"eval_loss": 1.0, "train_loss_initial": 1.0, "train_loss_final": 0.9}}
        assert ordering_failures(means) == ["interleave_hdm training reduced the loss by 10.0%, expected at least 30%"]


@pytest.mark.slow
class TestDriftBench:
    """Test the rotation drift bench."""

    def test_rows_and_metrics(self, small_config):
        report = run_drift_bench(small_config)
        assert len(report.rows) == 2 * 5 * (6 + 2)
        sas_metrics = {r.metric_name for r in report.rows if r.strategy == "sas"}
        assert sas_metrics == {"topo_npr", "geo_npr", "topo_npr_cds", "topo_npr_gcs", "geo_npr_cds", "geo_npr_gcs"}
        assert all(0.0 <= r.value <= 1.0 for r in report.rows)
        assert "invariance_violations" in report.summary

    def test_sas_rate_covers_both_traversals(self, small_config):
        """The sequence window never scores below either traversal alone."""
        report = run_drift_bench(small_config, strategies=["sas"])
        cells = {}
        for r in report.rows:
            cells.setdefault((r.shape_id, r.perturbation), {})[r.metric_name] = r.value
        for cell in cells.values():
            for metric in ("topo_npr", "geo_npr"):
                assert cell[metric] >= max(cell[f"{metric}_cds"], cell[f"{metric}_gcs"]) - 1e-12

    def test_reruns_match(self, small_config):
        assert values(run_drift_bench(small_config)) == values(run_drift_bench(small_config))

    def test_too_few_rotations(self, small_config):
        with pytest.raises(DegenerateInputError):
            run_drift_bench(small_config, rotations_per_shape=4)

    def test_cell_count(self, small_config):
        assert DriftBench().cell_count(small_config) == 10


class TestOtherBenches:
    """Test the invariance, BFS, complexity and ablation drivers."""

    def test_invariance_rows(self, small_config):
        report = run_invariance_bench(small_config)
        assert len(report.rows) == 2 * 5 * 5
        assert {r.value for r in report.rows} <= {0.0, 1.0}

    def test_bfs_scores_itself_one(self, small_config):
        report = run_bfs_vs_spectral(small_config)
        assert len(report.rows) == 4
        assert report.summary["means"]["cds_bfs"]["npr_bfs_r2"] == 1.0

    def test_bfs_timing_summary(self, small_config):
        """Totals for both serializers land in the summary, not in the rows."""
        report = run_bfs_vs_spectral(small_config)
        elapsed = report.summary["elapsed_ms"]
        assert set(elapsed) == {"cds_bfs", "cds_spectral"}
        assert all(v > 0.0 for v in elapsed.values())
        assert all(r.elapsed_ms == 0.0 for r in report.rows)

    def test_snapshot_keeps_configured_solver(self, small_config):
        report = run_invariance_bench(small_config, rotations_per_shape=1)
        assert report.config["graph"]["eig_solver"] == "jacobi"
        assert report.config["bench"]["eig_solver"] == "lapack"

    def test_complexity_rows(self, small_config):
        report = run_complexity_bench(small_config)
        assert [r.shape_id for r in report.rows] == ["G=0008", "G=0016"]
        assert [r.value for r in report.rows] == [32.0, 64.0]
        assert np.isfinite(report.summary["log_log_slope"])

    @pytest.mark.slow
    def test_ablation_rows(self, small_config):
        report = run_ablation("interleave_hdm", small_config)
        assert [r.metric_name for r in report.rows] == ["train_loss_final", "train_loss_initial", "eval_loss"]
        assert report.rows[-1].perturbation == "rotate"

    @pytest.mark.slow
    def test_ablation_bench(self, small_config):
        result = AblationBench().run(small_config)
        means = result.report.summary["means"]
        assert result.report.summary["failures"] == ordering_failures(means)
        assert any("seed(s)" in w for w in result.report.summary["warnings"])
        assert {r.strategy for r in result.report.rows} == {"interleave_hdm", "zorder"}
