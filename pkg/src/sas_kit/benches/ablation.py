"""Ablations of serialization, fusion and alignment on the toy reconstruction task."""

import logging
import re
from dataclasses import dataclass, replace
from typing import Callable

from ..config import AlignmentConfig, GraphConfig, SasConfig, bench_config, config_snapshot
from ..errors import BenchAssertionError, DegenerateInputError
from ..shapes import Perturbation
from ..training import (
    ToySample,
    build_toy_samples,
    evaluate_toy,
    init_model,
    source_bank_from_samples,
    train_toy,
)
from .base import BaseBench, BenchReport, BenchResult, BenchRow, judge

logger = logging.getLogger("sas_kit.benches.ablation")

FULL = "interleave_hdm"
ORDER_ABLATIONS = ("no_cds", "no_gcs", "zorder", "hilbert", "fps_order", "random")
FIXED_KERNEL_SCALES = (0.05, 0.1, 0.2)
ALIGN_SWEEP = ("sga_on", "fixed_alpha(0.0)", "fixed_alpha(0.5)", "fixed_alpha(1.0)")
MIN_ORDERING_SEEDS = 4
_PARAMETRIC = re.compile(r"^(fixed_alpha|fixed_kernel)\(([0-9.eE+-]+)\)$")


@dataclass(frozen=True)
class AblationVariant:
    """What one ablation substitutes into the full pipeline."""
    name: str
    order_variant: str = "sas"
    fusion_mode: str = "interleave"
    alignment: AlignmentConfig | None = None
    kernel_scale: float | None = None


def parse_variant(name: str, cfg: SasConfig) -> AblationVariant:
    """Resolve a variant name such as ``no_gcs`` or ``fixed_alpha(0.3)``."""
    base = cfg.alignment
    if name in (FULL, "sga_off"):
        return AblationVariant(name)
    if name == "concat_hdm":
        return AblationVariant(name, fusion_mode="concat")
    if name in ORDER_ABLATIONS:
        return AblationVariant(name, order_variant=name)
    if name == "sga_on":
        return AblationVariant(name, alignment=replace(base, mode="adaptive_cosine"))
    if name == "simple_shift":
        return AblationVariant(name, alignment=replace(base, mode="simple_shift"))
    match = _PARAMETRIC.match(name)
    if match:
        kind, value = match.group(1), float(match.group(2))
        if kind == "fixed_alpha":
            if not 0.0 <= value <= 1.0:
                raise DegenerateInputError(f"fixed_alpha needs alpha in [0, 1], got {value}")
            return AblationVariant(name, alignment=replace(base, mode="fixed_alpha", alpha=value))
        if value <= 0:
            raise DegenerateInputError(f"fixed_kernel needs a positive scale, got {value}")
        return AblationVariant(name, kernel_scale=value)
    raise DegenerateInputError(f"unknown ablation variant {name!r}")


def _graph_cfg(variant: AblationVariant, cfg: SasConfig) -> GraphConfig:
    if variant.kernel_scale is None:
        return cfg.graph
    return replace(cfg.graph, cds_scale=variant.kernel_scale, gcs_scale=variant.kernel_scale)


def _eval_shift(cfg: SasConfig) -> Callable[[int], Perturbation] | None:
    if not cfg.toy.rotated_eval:
        return None
    return lambda i: Perturbation("rotate", seed=cfg.seed * 1_000_003 + 500_000 + i)


def run_ablation(
    variant: str,
    cfg: SasConfig,
    seeds: list[int] | None = None,
    on_cell: Callable[[], None] | None = None,
    sample_cache: dict | None = None,
) -> BenchReport:
    """Train on the corpus and evaluate (rotated) queries with the variant substituted.

    Rows per seed: ``train_loss_initial``, ``train_loss_final`` and
    ``eval_loss``. Evaluation never changes the trained parameters.
    """
    snapshot = config_snapshot(cfg)
    cfg = bench_config(cfg)
    chosen = parse_variant(variant, cfg)
    seeds = seeds if seeds is not None else list(cfg.bench.ablation_seeds)
    graph_cfg = _graph_cfg(chosen, cfg)
    toy = cfg.toy
    cache = sample_cache if sample_cache is not None else {}

    def samples(kind: str) -> list[ToySample]:
        key = (kind, chosen.order_variant, chosen.kernel_scale)
        if key not in cache:
            shift = _eval_shift(cfg) if kind == "eval" else None
            cache[key] = build_toy_samples(cfg, chosen.order_variant, shift, graph_cfg)
        return cache[key]

    train_samples = samples("train")
    eval_samples = samples("eval")
    bank = source_bank_from_samples(train_samples, graph_cfg) if chosen.alignment is not None else None
    perturbation = "rotate" if toy.rotated_eval else "none"

    report = BenchReport("ablation", config=snapshot)
    for seed in seeds:
        model_cfg = replace(cfg.model, embed_dim=toy.embed_dim, init_seed=seed)
        model = init_model(model_cfg, toy.group_size, toy.embed_dim)
        result = train_toy(model, train_samples, toy.epochs, toy.lr, cfg.train.mask_ratio, seed,
                           cfg.train.cosine_decay, chosen.fusion_mode)
        before = result.model.checksum()
        eval_loss = evaluate_toy(result.model, eval_samples, cfg.train.mask_ratio, cfg.seed, chosen.fusion_mode,
                                 chosen.alignment, bank, graph_cfg)
        if result.model.checksum() != before:
            raise BenchAssertionError(f"{variant}: evaluation changed model parameters")
        shape_id = f"seed={seed}"
        report.rows.extend([
            BenchRow(shape_id, variant, "none", "train_loss_initial", result.trace[0] if result.trace else eval_loss),
            BenchRow(shape_id, variant, "none", "train_loss_final", result.trace[-1] if result.trace else eval_loss),
            BenchRow(shape_id, variant, perturbation, "eval_loss", eval_loss),
        ])
        logger.info("ablation %s seed %d: eval loss %.5f", variant, seed, eval_loss)
        if on_cell is not None:
            on_cell()
    report.rows = report.sorted_rows()
    report.summary = {"means": report.means()}
    return report


def ordering_failures(means: dict[str, dict[str, float]]) -> list[str]:
    """Expected orderings of mean eval loss; missing variants are skipped."""
    def loss(name: str) -> float | None:
        return means.get(name, {}).get("eval_loss")

    pairs = [(FULL, rival) for rival in ("no_cds", "no_gcs", "zorder", "hilbert", "random")]
    pairs += [(FULL, "concat_hdm"), ("sga_on", "sga_off"), ("sga_on", "simple_shift")]
    failures = []
    for better, worse in pairs:
        a, b = loss(better), loss(worse)
        if a is None or b is None:
            continue
        strict = worse in ORDER_ABLATIONS
        if (a >= b) if strict else (a > b):
            failures.append(f"{better} eval loss {a:.5f} vs {worse} {b:.5f}")
    full = means.get(FULL, {})
    if "train_loss_initial" in full and full["train_loss_initial"] > 0:
        reduction = 1.0 - full["train_loss_final"] / full["train_loss_initial"]
        if reduction < 0.3:
            failures.append(f"{FULL} training reduced the loss by {reduction:.1%}, expected at least 30%")
    return failures


class AblationBench(BaseBench):
    """Every configured ablation variant over every ablation seed."""

    name = "ablate"
    description = "Serialization, fusion and alignment ablations on the toy task"

    def __init__(self, variants: list[str] | None = None):
        self.variants = variants

    def _variants(self, cfg: SasConfig) -> list[str]:
        return list(self.variants or cfg.bench.ablation_variants)

    def cell_count(self, cfg: SasConfig) -> int:
        return len(self._variants(cfg)) * len(cfg.bench.ablation_seeds)

    def run(self, cfg: SasConfig, on_cell: Callable[[], None] | None = None) -> BenchResult:
        report = BenchReport(self.name, config=config_snapshot(cfg))
        cache: dict = {}
        failures = []
        for variant in self._variants(cfg):
            try:
                part = run_ablation(variant, cfg, on_cell=on_cell, sample_cache=cache)
            except BenchAssertionError as e:
                failures.append(str(e))
                continue
            report.rows.extend(part.rows)
        report.rows = report.sorted_rows()
        means = report.means()
        report.summary = {"means": means}
        seeds = len(cfg.bench.ablation_seeds)
        warnings = []
        if seeds < MIN_ORDERING_SEEDS:
            warnings.append(f"orderings judged on {seeds} seed(s); at least {MIN_ORDERING_SEEDS} are expected")
        return judge(self.name, report, failures + ordering_failures(means), warnings,
                     f"{len(self._variants(cfg))} variant(s) over {len(cfg.bench.ablation_seeds)} seed(s)")
