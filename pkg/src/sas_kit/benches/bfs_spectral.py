"""Naive BFS CDS against the spectral (Fiedler) CDS: agreement and wall time."""

import logging
import time
from typing import Callable

from ..config import SasConfig, bench_config, config_snapshot
from ..graph import build_cds_graph, geodesic_graph
from ..metrics import npr_bfs_reference
from ..pointcloud import tokenize_with
from ..serialization import serialize_cds_bfs, serialize_cds_spectral, serialize_cds_spectral_batch
from ..shapes import build_corpus
from .base import BaseBench, BenchReport, BenchResult, BenchRow, judge, run_cells

logger = logging.getLogger("sas_kit.benches.bfs_spectral")

NPR_THRESHOLD = 0.85


def run_bfs_vs_spectral(cfg: SasConfig, r: int | None = None, on_cell: Callable[[], None] | None = None) -> BenchReport:
    """Per shape: both CDS serializers and their NPR against BFS.

    Wall time is taken afterwards on the calling thread: BFS once per
    shape, the spectral side as one batched LAPACK decomposition over every
    shape. Totals land in ``summary["elapsed_ms"]``.
    """
    snapshot = config_snapshot(cfg)
    cfg = bench_config(cfg)
    r = r or cfg.npr.r
    shapes = build_corpus(cfg.corpus.kinds, cfg.corpus.seeds, cfg.corpus.n_points)
    metric = f"npr_bfs_r{r}"

    def cell(job: tuple[str, object]) -> tuple[list[BenchRow], object]:
        shape_id, cloud = job
        tokens = tokenize_with(cloud, cfg.tokenizer)
        centers = tokens.centers
        graph = build_cds_graph(centers, cfg.graph.cds_scale)
        adjacency = geodesic_graph(centers, cfg.graph.knn_k)
        bfs = serialize_cds_bfs(graph, centers, cfg.graph.knn_k)
        spectral = serialize_cds_spectral(graph, centers, cfg.graph.eig_solver)
        rows = [
            BenchRow(shape_id, "cds_bfs", "none", metric, npr_bfs_reference(bfs, bfs, adjacency, r)),
            BenchRow(shape_id, "cds_spectral", "none", metric, npr_bfs_reference(spectral, bfs, adjacency, r)),
        ]
        return rows, (graph, centers)

    report = BenchReport("bfs-vs-spectral", config=snapshot)
    inputs = []
    for rows, graph_and_centers in run_cells(cell, shapes, on_done=on_cell):
        report.rows.extend(rows)
        inputs.append(graph_and_centers)
    report.rows = report.sorted_rows()

    start = time.perf_counter()
    for graph, centers in inputs:
        serialize_cds_bfs(graph, centers, cfg.graph.knn_k)
    bfs_ms = (time.perf_counter() - start) * 1000.0
    start = time.perf_counter()
    serialize_cds_spectral_batch([g for g, _ in inputs], [c for _, c in inputs])
    spectral_ms = (time.perf_counter() - start) * 1000.0
    logger.info("BFS %.2f ms over %d shapes, batched spectral %.2f ms", bfs_ms, len(inputs), spectral_ms)

    report.summary = {
        "means": report.means(),
        "elapsed_ms": {"cds_bfs": bfs_ms, "cds_spectral": spectral_ms},
        "timing": "sequential BFS per shape vs one batched LAPACK eigh",
        "metric": metric,
    }
    return report


def bfs_spectral_failures(summary: dict) -> list[str]:
    """BFS must reproduce itself; spectral must reach the NPR bar and beat BFS on time."""
    metric = summary["metric"]
    means = summary["means"]
    failures = []
    if means["cds_bfs"][metric] != 1.0:
        failures.append(f"BFS against itself scored {means['cds_bfs'][metric]:.4f}, expected 1.0")
    if means["cds_spectral"][metric] < NPR_THRESHOLD:
        failures.append(f"spectral mean NPR {means['cds_spectral'][metric]:.4f} below {NPR_THRESHOLD}")
    elapsed = summary["elapsed_ms"]
    if elapsed["cds_spectral"] >= elapsed["cds_bfs"]:
        failures.append(
            f"spectral CDS took {elapsed['cds_spectral']:.1f} ms in total, BFS {elapsed['cds_bfs']:.1f} ms"
        )
    return failures


class BfsSpectralBench(BaseBench):
    """BFS oracle versus Fiedler-vector CDS."""

    name = "bfs-vs-spectral"
    description = "NPR of spectral CDS against the BFS oracle, plus runtime of both"

    def cell_count(self, cfg: SasConfig) -> int:
        return len(cfg.corpus.kinds) * len(cfg.corpus.seeds)

    def run(self, cfg: SasConfig, on_cell: Callable[[], None] | None = None) -> BenchResult:
        report = run_bfs_vs_spectral(cfg, on_cell=on_cell)
        metric = report.summary["metric"]
        return judge(self.name, report, bfs_spectral_failures(report.summary), [],
                     f"spectral mean NPR {report.summary['means']['cds_spectral'][metric]:.3f}")
