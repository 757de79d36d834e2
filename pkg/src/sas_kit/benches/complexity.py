"""Wall time of serialization plus alignment as the token count grows."""

import time
from dataclasses import replace
from typing import Callable

import numpy as np

from ..align import align_pipeline, build_source_bank
from ..config import SasConfig, bench_config, config_snapshot
from ..pointcloud import normalize_unit_sphere, tokenize
from ..serialization import sas_orders
from ..shapes import gen_shape
from .base import BaseBench, BenchReport, BenchResult, BenchRow, judge

MAX_SLOPE = 3.5


def run_complexity_bench(cfg: SasConfig, sizes: list[int] | None = None, on_cell: Callable[[], None] | None = None) -> BenchReport:
    """Time SAS orders + adaptive alignment at each G; fit the log-log slope.

    Cells run one after another so their timings do not compete.
    """
    snapshot = config_snapshot(cfg)
    cfg = bench_config(cfg)
    sizes = sorted(sizes or cfg.bench.complexity_sizes)
    t = cfg.tokenizer
    group = cfg.toy.group_size
    alignment = replace(cfg.alignment, mode="adaptive_cosine")
    report = BenchReport("complexity", config=snapshot)
    seconds = []
    for g in sizes:
        n_points = max(cfg.corpus.n_points, 4 * g * group)
        target = tokenize(normalize_unit_sphere(gen_shape("torus", n_points, cfg.seed)), g, group, t.embed_dim, t.projection_seed)
        source = tokenize(normalize_unit_sphere(gen_shape("torus", n_points, cfg.seed + 1)), g, group, t.embed_dim, t.projection_seed)
        bank = build_source_bank([source], cfg.graph)
        start = time.perf_counter()
        cds, gcs = sas_orders(target, cfg.graph)
        align_pipeline(target, {"cds": cds, "gcs": gcs}, bank, alignment, cfg.graph)
        elapsed = (time.perf_counter() - start) * 1000.0
        seconds.append(elapsed / 1000.0)
        report.rows.append(BenchRow(f"G={g:04d}", "sas+sga", "none", "sequence_length", float(4 * g), elapsed))
        if on_cell is not None:
            on_cell()
    report.rows = report.sorted_rows()
    slope = float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0]) if len(sizes) >= 2 else 0.0
    report.summary = {"sizes": sizes, "seconds": seconds, "log_log_slope": slope, "max_slope": MAX_SLOPE}
    return report


class ComplexityBench(BaseBench):
    """Growth of serialization + alignment time with G."""

    name = "complexity"
    description = "Serialization + alignment time must grow no faster than ~G^3"

    def cell_count(self, cfg: SasConfig) -> int:
        return len(cfg.bench.complexity_sizes)

    def run(self, cfg: SasConfig, on_cell: Callable[[], None] | None = None) -> BenchResult:
        report = run_complexity_bench(cfg, on_cell=on_cell)
        slope = report.summary["log_log_slope"]
        warnings = [] if slope <= MAX_SLOPE else [f"log-log slope {slope:.2f} exceeds {MAX_SLOPE}"]
        return judge(self.name, report, [], warnings, f"log-log slope {slope:.2f}")
