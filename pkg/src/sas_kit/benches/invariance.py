"""Rotation invariance of each serialization strategy's permutation."""

from typing import Callable

from ..config import SasConfig, bench_config, config_snapshot
from ..pointcloud import tokenize_with
from ..serialization import serialize
from ..shapes import Perturbation, build_corpus, perturb
from .base import BaseBench, BenchReport, BenchResult, BenchRow, judge, run_cells
from .drift import rotation_seed

INVARIANT = ("cds_bfs", "cds_spectral", "gcs")
COORDINATE_BOUND = ("zorder", "hilbert")


def run_invariance_bench(
    cfg: SasConfig,
    rotations_per_shape: int | None = None,
    on_cell: Callable[[], None] | None = None,
) -> BenchReport:
    """One ``order_unchanged`` row (1.0 or 0.0) per shape x rotation x strategy."""
    snapshot = config_snapshot(cfg)
    cfg = bench_config(cfg)
    rotations = rotations_per_shape or cfg.bench.rotations_per_shape
    strategies = INVARIANT + COORDINATE_BOUND
    shapes = build_corpus(cfg.corpus.kinds, cfg.corpus.seeds, cfg.corpus.n_points)

    def reference(job: tuple[str, object]) -> dict[str, object]:
        _, cloud = job
        tokens = tokenize_with(cloud, cfg.tokenizer)
        return {s: serialize(tokens, s, cfg.graph, cfg.serialization).permutation for s in strategies}

    references = dict(zip((sid for sid, _ in shapes), run_cells(reference, shapes)))

    def cell(job: tuple[int, str, object, int]) -> list[BenchRow]:
        index, shape_id, cloud, r = job
        shift = Perturbation("rotate", seed=rotation_seed(cfg, index, r))
        tokens = tokenize_with(perturb(cloud, shift), cfg.tokenizer)
        rows = []
        for strategy in strategies:
            perm = serialize(tokens, strategy, cfg.graph, cfg.serialization).permutation
            same = bool((perm == references[shape_id][strategy]).all())
            rows.append(BenchRow(shape_id, strategy, shift.label, "order_unchanged", 1.0 if same else 0.0))
        return rows

    jobs = [(i, sid, cloud, r) for i, (sid, cloud) in enumerate(shapes) for r in range(rotations)]
    report = BenchReport("invariance-bench", config=snapshot)
    for rows in run_cells(cell, jobs, on_done=on_cell):
        report.rows.extend(rows)
    report.rows = report.sorted_rows()
    report.summary = {"means": report.means()}
    return report


class InvarianceBench(BaseBench):
    """Exact permutation equality under random rigid transforms."""

    name = "invariance-bench"
    description = "CDS/GCS orders must survive rotations; Z-order and Hilbert must not"

    def cell_count(self, cfg: SasConfig) -> int:
        return len(cfg.corpus.kinds) * len(cfg.corpus.seeds) * cfg.bench.rotations_per_shape

    def run(self, cfg: SasConfig, on_cell: Callable[[], None] | None = None) -> BenchResult:
        report = run_invariance_bench(cfg, on_cell=on_cell)
        failures = [
            f"{r.shape_id} {r.perturbation}: {r.strategy} order changed"
            for r in report.rows
            if r.strategy in INVARIANT and r.value != 1.0
        ]
        means = report.means()
        warnings = [
            f"{s} never changed under rotation; no counterexample found"
            for s in COORDINATE_BOUND
            if s in means and means[s]["order_unchanged"] == 1.0
        ]
        return judge(self.name, report, failures, warnings, "CDS and GCS orders are rotation invariant")
