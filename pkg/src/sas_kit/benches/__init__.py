"""Benchmark drivers."""

from .ablation import ALIGN_SWEEP, FIXED_KERNEL_SCALES, AblationBench, parse_variant, run_ablation
from .base import BaseBench, BenchReport, BenchResult, BenchRow, BenchStatus
from .bfs_spectral import BfsSpectralBench, run_bfs_vs_spectral
from .complexity import ComplexityBench, run_complexity_bench
from .drift import DriftBench, run_drift_bench, strategy_orders
from .invariance import InvarianceBench, run_invariance_bench

# All registered benches in run order
ALL_BENCHES: list[type[BaseBench]] = [
    InvarianceBench,
    DriftBench,
    BfsSpectralBench,
    ComplexityBench,
    AblationBench,
]

__all__ = [
    "ALIGN_SWEEP",
    "ALL_BENCHES",
    "FIXED_KERNEL_SCALES",
    "AblationBench",
    "BaseBench",
    "BenchReport",
    "BenchResult",
    "BenchRow",
    "BenchStatus",
    "BfsSpectralBench",
    "ComplexityBench",
    "DriftBench",
    "InvarianceBench",
    "parse_variant",
    "run_ablation",
    "run_bfs_vs_spectral",
    "run_complexity_bench",
    "run_drift_bench",
    "run_invariance_bench",
    "strategy_orders",
]
