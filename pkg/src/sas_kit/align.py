"""Test-time spectral graph alignment and the plain feature-shift baseline."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import AlignmentConfig, GraphConfig
from .errors import DegenerateInputError, DimensionMismatchError
from .graph import (
    SpectralBasis,
    TokenGraph,
    build_cds_graph,
    build_gcs_graph,
    curvature_descriptor,
    laplacian,
    sym_eig,
)
from .pointcloud import TokenSet
from .serialization import SerializationOrder, sas_orders

logger = logging.getLogger("sas_kit.align")

KINDS = ("cds", "gcs")


@dataclass(frozen=True)
class SpectralPrototype:
    """Source anchor in the spectral domain of one target basis."""
    basis_kind: str
    vector: np.ndarray
    source_count: int


@dataclass
class SourceBank:
    """Serialized source features per strategy kind, with an optional domain tag per source."""
    features: dict[str, list[np.ndarray]] = field(default_factory=lambda: {k: [] for k in KINDS})
    domains: list[str] = field(default_factory=list)

    def add(self, serialized: dict[str, np.ndarray], domain: str = "source") -> None:
        for kind in KINDS:
            self.features[kind].append(np.asarray(serialized[kind], dtype=np.float64))
        self.domains.append(domain)

    def __len__(self) -> int:
        return len(self.domains)

    def by_domain(self, kind: str) -> dict[str, list[np.ndarray]]:
        grouped: dict[str, list[np.ndarray]] = {}
        for domain, feats in zip(self.domains, self.features[kind]):
            grouped.setdefault(domain, []).append(feats)
        return grouped

    def spatial_prototype(self) -> np.ndarray:
        """Mean source feature over every token of every source (d-vector)."""
        if not self.domains:
            raise DegenerateInputError("source bank is empty")
        return np.mean([f.mean(axis=0) for f in self.features["cds"]], axis=0)


@dataclass(frozen=True)
class AlignmentResult:
    """Aligned features in token order plus a small metrics record."""
    features: np.ndarray
    metrics: dict[str, float]


def gft(basis: SpectralBasis, signal: np.ndarray) -> np.ndarray:
    """Graph Fourier transform X̂ = Φᵀ X."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != basis.size:
        raise DimensionMismatchError(f"signal has {signal.shape[0]} rows, basis size is {basis.size}")
    return basis.eigenvectors.T @ signal


def igft(basis: SpectralBasis, spectral: np.ndarray) -> np.ndarray:
    """Inverse graph Fourier transform X = Φ X̂."""
    spectral = np.asarray(spectral, dtype=np.float64)
    if spectral.shape[0] != basis.size:
        raise DimensionMismatchError(f"spectrum has {spectral.shape[0]} rows, basis size is {basis.size}")
    return basis.eigenvectors @ spectral


def compute_prototype(target_basis: SpectralBasis, source_features: list[np.ndarray], kind: str) -> SpectralPrototype:
    """Token-wise source mean, projected on the target basis, averaged over spectral rows."""
    if not source_features:
        raise DegenerateInputError("compute_prototype needs at least one source")
    mean = np.mean(np.stack([np.asarray(s, dtype=np.float64) for s in source_features]), axis=0)
    projected = gft(target_basis, mean)
    return SpectralPrototype(kind, projected.mean(axis=0), len(source_features))


def _row_cosines(rows: np.ndarray, vector: np.ndarray) -> np.ndarray:
    row_norms = np.linalg.norm(rows, axis=1)
    v_norm = float(np.linalg.norm(vector))
    denom = row_norms * v_norm
    return np.where(denom > 0, rows @ vector / np.where(denom > 0, denom, 1.0), 1.0)


def shift_coefficients(spectral_tokens: np.ndarray, prototype: SpectralPrototype, config: AlignmentConfig) -> np.ndarray:
    """Per-row α used by ``spectral_shift``; zero-norm rows get α = 1."""
    n = spectral_tokens.shape[0]
    if config.mode == "off":
        return np.ones(n)
    zero = np.linalg.norm(spectral_tokens, axis=1) == 0
    if config.mode == "fixed_alpha":
        alpha = np.full(n, config.alpha)
    elif config.mode == "adaptive_cosine":
        cos = _row_cosines(spectral_tokens, prototype.vector)
        alpha = np.clip((1.0 + cos) / 2.0, config.eps_low, 1.0)
    else:
        raise DegenerateInputError(f"spectral_shift does not support mode {config.mode!r}")
    return np.where(zero, 1.0, alpha)


def spectral_shift(spectral_tokens: np.ndarray, prototype: SpectralPrototype, config: AlignmentConfig) -> np.ndarray:
    """X̂_i ← α_i X̂_i + (1 − α_i)(P̂ − X̂_i), applied literally per row."""
    x = np.asarray(spectral_tokens, dtype=np.float64)
    if x.shape[1] != prototype.vector.shape[0]:
        raise DimensionMismatchError(f"prototype has dimension {prototype.vector.shape[0]}, tokens {x.shape[1]}")
    alpha = shift_coefficients(x, prototype, config)[:, None]
    return alpha * x + (1.0 - alpha) * (prototype.vector[None, :] - x)


def simple_shift(features: np.ndarray, prototype_spatial: np.ndarray, beta: float = 0.5) -> np.ndarray:
    """X ← βX + (1 − β)(P − X) in feature space."""
    x = np.asarray(features, dtype=np.float64)
    return beta * x + (1.0 - beta) * (np.asarray(prototype_spatial, dtype=np.float64)[None, :] - x)


def target_graph(token_set: TokenSet, kind: str, graph_cfg: GraphConfig) -> TokenGraph:
    """The target's own CDS or GCS token graph."""
    centers = token_set.centers
    if kind == "cds":
        return build_cds_graph(centers, graph_cfg.cds_scale)
    descriptor = curvature_descriptor(centers, graph_cfg.knn_k, graph_cfg.heat_times, graph_cfg.eig_solver)
    return build_gcs_graph(descriptor, graph_cfg.gcs_scale)


def serialized_basis(graph: TokenGraph, order: SerializationOrder, graph_cfg: GraphConfig) -> SpectralBasis:
    """Laplacian basis of a graph with rows re-indexed by sequence rank."""
    lap = laplacian(graph.affinity, graph_cfg.sga_laplacian)
    perm = order.permutation
    return sym_eig(lap[np.ix_(perm, perm)], solver=graph_cfg.eig_solver, laplacian_mode=graph_cfg.sga_laplacian)


def _pick_prototype(basis: SpectralBasis, bank: SourceBank, kind: str, spectral: np.ndarray, config: AlignmentConfig) -> SpectralPrototype:
    if config.prototype_pooling == "pooled":
        return compute_prototype(basis, bank.features[kind], kind)
    target_mean = spectral.mean(axis=0)
    best, best_cos = None, -np.inf
    for domain, feats in sorted(bank.by_domain(kind).items()):
        proto = compute_prototype(basis, feats, kind)
        cos = float(_row_cosines(proto.vector[None, :], target_mean)[0])
        if cos > best_cos:
            best, best_cos = proto, cos
    logger.debug("per-domain prototype selected for %s (cos=%.3f)", kind, best_cos)
    return best


def align_pipeline(
    target_tokens: TokenSet,
    target_orders: dict[str, SerializationOrder],
    source_bank: SourceBank,
    config: AlignmentConfig,
    graph_cfg: GraphConfig | None = None,
) -> AlignmentResult:
    """Shift target token features toward source prototypes in the CDS and GCS spectra.

    The CDS- and GCS-aligned features are averaged. Inputs are never mutated.
    """
    graph_cfg = graph_cfg or GraphConfig()
    x = np.array(target_tokens.features, dtype=np.float64)
    if config.mode == "off":
        return AlignmentResult(x, {"shift_norm": 0.0})
    if len(source_bank) == 0:
        raise DegenerateInputError("alignment needs a non-empty source bank")
    if config.mode == "simple_shift":
        out = simple_shift(x, source_bank.spatial_prototype(), config.beta)
        return AlignmentResult(out, {"shift_norm": float(np.linalg.norm(out - x))})

    aligned = []
    metrics: dict[str, float] = {}
    for kind in KINDS:
        order = target_orders[kind]
        if order.size != target_tokens.size:
            raise DimensionMismatchError(f"{kind} order covers {order.size} tokens, target has {target_tokens.size}")
        basis = serialized_basis(target_graph(target_tokens, kind, graph_cfg), order, graph_cfg)
        spectral = gft(basis, x[order.permutation])
        prototype = _pick_prototype(basis, source_bank, kind, spectral, config)
        shifted = spectral_shift(spectral, prototype, config)
        restored = np.empty_like(x)
        restored[order.permutation] = igft(basis, shifted)
        aligned.append(restored)
        metrics[f"{kind}_cos_pre"] = float(np.mean(_row_cosines(spectral, prototype.vector)))
        metrics[f"{kind}_cos_post"] = float(np.mean(_row_cosines(shifted, prototype.vector)))

    out = np.mean(aligned, axis=0)
    metrics["shift_norm"] = float(np.linalg.norm(out - x))
    return AlignmentResult(out, metrics)


def serialized_features(token_set: TokenSet, graph_cfg: GraphConfig | None = None) -> dict[str, np.ndarray]:
    """Source features reordered by the source's own CDS and GCS orders."""
    cds, gcs = sas_orders(token_set, graph_cfg)
    return {"cds": token_set.features[cds.permutation], "gcs": token_set.features[gcs.permutation]}


def build_source_bank(token_sets: list[TokenSet], graph_cfg: GraphConfig | None = None) -> SourceBank:
    """Serialize every source token set into a bank, tagged by the cloud's source tag."""
    bank = SourceBank()
    for tokens in token_sets:
        bank.add(serialized_features(tokens, graph_cfg), tokens.cloud.source_tag or "source")
    return bank


def save_source_dump(token_set: TokenSet, path: Path, graph_cfg: GraphConfig | None = None) -> Path:
    """Write one source's serialized features as JSON."""
    serialized = serialized_features(token_set, graph_cfg)
    payload = {"domain": token_set.cloud.source_tag or "source", **{k: v.tolist() for k, v in serialized.items()}}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def load_source_bank(directory: Path) -> SourceBank:
    """Read every ``*.json`` source dump in a directory, in sorted file order."""
    bank = SourceBank()
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise DegenerateInputError(f"no source dumps (*.json) found in {directory}")
    for path in files:
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            bank.add({k: np.array(payload[k], dtype=np.float64) for k in KINDS}, payload.get("domain", path.stem))
        except (json.JSONDecodeError, KeyError) as e:
            raise DegenerateInputError(f"invalid source dump {path}: {e}")
    return bank
