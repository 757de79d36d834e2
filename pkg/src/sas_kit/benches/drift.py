"""Structural drift: Topo-NPR and Geo-NPR of each strategy under random rotations."""

import logging
import time
from typing import Callable

from ..config import NprConfig, SasConfig, bench_config, config_snapshot
from ..errors import DegenerateInputError
from ..metrics import geo_neighbors, npr_window, topo_neighbors
from ..pointcloud import TokenSet, tokenize_with
from ..serialization import SerializationOrder, sas_orders, serialize
from ..shapes import Perturbation, build_corpus, perturb
from .base import BaseBench, BenchReport, BenchResult, BenchRow, judge, run_cells

logger = logging.getLogger("sas_kit.benches.drift")

# orders built only from intrinsic geometry; rotations must not move them
INVARIANT_STRATEGIES = ("sas", "cds_bfs", "cds_spectral", "gcs")
MIN_ROTATIONS = 5


def strategy_orders(tokens: TokenSet, strategy: str, cfg: SasConfig) -> tuple[SerializationOrder, ...]:
    """``sas`` yields its (CDS, GCS) pair, any other strategy a single order."""
    if strategy == "sas":
        return sas_orders(tokens, cfg.graph)
    return (serialize(tokens, strategy, cfg.graph, cfg.serialization),)


def rotation_seed(cfg: SasConfig, shape_index: int, rotation: int) -> int:
    return cfg.seed * 1_000_003 + shape_index * 1_000 + rotation


def run_drift_bench(
    cfg: SasConfig,
    strategies: list[str] | None = None,
    rotations_per_shape: int | None = None,
    npr_cfg: NprConfig | None = None,
    on_cell: Callable[[], None] | None = None,
) -> BenchReport:
    """Rows per shape x rotation x strategy x {topo_npr, geo_npr}.

    Invariant strategies are compared against their unrotated orders; any
    mismatch lands in ``summary["invariance_violations"]``.
    """
    snapshot = config_snapshot(cfg)
    cfg = bench_config(cfg)
    strategies = strategies or list(cfg.bench.drift_strategies)
    rotations = rotations_per_shape or cfg.bench.rotations_per_shape
    npr_cfg = npr_cfg or cfg.npr
    shapes = build_corpus(cfg.corpus.kinds, cfg.corpus.seeds, cfg.corpus.n_points)
    if not shapes:
        raise DegenerateInputError("drift bench needs at least one shape")
    if rotations < MIN_ROTATIONS:
        raise DegenerateInputError(f"drift bench needs at least {MIN_ROTATIONS} rotations, got {rotations}")

    references = {}
    for shape_id, cloud in shapes:
        tokens = tokenize_with(cloud, cfg.tokenizer)
        references[shape_id] = {
            s: [o.permutation for o in strategy_orders(tokens, s, cfg)] for s in strategies if s in INVARIANT_STRATEGIES
        }

    def cell(job: tuple[int, str, object, int]) -> tuple[list[BenchRow], list[str]]:
        index, shape_id, cloud, r = job
        shift = Perturbation("rotate", seed=rotation_seed(cfg, index, r))
        tokens = tokenize_with(perturb(cloud, shift), cfg.tokenizer)
        topo_ref = topo_neighbors(tokens.centers, npr_cfg.k)
        geo_ref = geo_neighbors(tokens.features, npr_cfg.k)
        rows, violations = [], []
        for strategy in strategies:
            start = time.perf_counter()
            orders = strategy_orders(tokens, strategy, cfg)
            elapsed = (time.perf_counter() - start) * 1000.0
            if strategy in references[shape_id]:
                if any((o.permutation != ref).any() for o, ref in zip(orders, references[shape_id][strategy])):
                    violations.append(f"{shape_id} {shift.label}: {strategy} order changed under rotation")
            for metric, ref in (("topo_npr", topo_ref), ("geo_npr", geo_ref)):
                rows.append(BenchRow(shape_id, strategy, shift.label, metric, npr_window(orders, ref, npr_cfg.h), elapsed))
                if len(orders) > 1:
                    for order in orders:
                        component = f"{metric}_{order.strategy.split('_')[0]}"
                        rows.append(BenchRow(shape_id, strategy, shift.label, component, npr_window(order, ref, npr_cfg.h)))
        return rows, violations

    jobs = [(i, sid, cloud, r) for i, (sid, cloud) in enumerate(shapes) for r in range(rotations)]
    report = BenchReport("drift-bench", config=snapshot)
    violations: list[str] = []
    for rows, bad in run_cells(cell, jobs, on_done=on_cell):
        report.rows.extend(rows)
        violations.extend(bad)
    report.rows = report.sorted_rows()
    report.summary = {
        "means": report.means(),
        "invariance_violations": violations,
        "npr": {"k": npr_cfg.k, "h": npr_cfg.h, "rotation": "uniform random (scipy Rotation.random)"},
    }
    logger.info("drift bench: %d rows, %d invariance violations", len(report.rows), len(violations))
    return report


def drift_trend_failures(means: dict[str, dict[str, float]]) -> list[str]:
    """SAS must beat every coordinate curve on both mean rates."""
    failures = []
    if "sas" not in means:
        return failures
    for rival in ("hilbert", "zorder"):
        if rival not in means:
            continue
        for metric in ("topo_npr", "geo_npr"):
            if not means["sas"][metric] > means[rival][metric]:
                failures.append(
                    f"sas mean {metric} {means['sas'][metric]:.4f} does not exceed {rival} {means[rival][metric]:.4f}"
                )
    return failures


class DriftBench(BaseBench):
    """Neighbourhood preservation under random rotations."""

    name = "drift-bench"
    description = "Topo-NPR / Geo-NPR of each strategy under random rigid rotations"

    def cell_count(self, cfg: SasConfig) -> int:
        return len(cfg.corpus.kinds) * len(cfg.corpus.seeds) * cfg.bench.rotations_per_shape

    def run(self, cfg: SasConfig, on_cell: Callable[[], None] | None = None) -> BenchResult:
        report = run_drift_bench(cfg, on_cell=on_cell)
        return judge(
            self.name,
            report,
            list(report.summary["invariance_violations"]) + drift_trend_failures(report.summary["means"]),
            [],
            f"{len(report.rows)} rows, SAS leads on topo_npr and geo_npr, rotation invariance held",
        )
