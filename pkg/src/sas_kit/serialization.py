"""Token serialization strategies and the four-segment SAS sequence."""

import logging
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import GraphConfig, SerializationConfig
from .errors import DegenerateInputError, DimensionMismatchError
from .graph import (
    HeatDescriptor,
    TokenGraph,
    build_cds_graph,
    curvature_descriptor,
    laplacian,
    sym_eig,
)
from .pointcloud import TokenSet
from .ranking import argmax_first, argmin_first, is_permutation, largest_k, rounded, stable_argsort

logger = logging.getLogger("sas_kit.serialization")

STRATEGIES = (
    "cds_bfs",
    "cds_spectral",
    "gcs",
    "zorder",
    "hilbert",
    "fps_order",
    "random",
    "euclid_centroid_sort",
    "naive_curvature_sort",
)
BASELINE_STRATEGIES = ("fps_order", "random", "euclid_centroid_sort", "naive_curvature_sort")
FIEDLER_EPS = 1e-8
MAX_CURVE_BITS = 21


@dataclass(frozen=True)
class SerializationOrder:
    """A permutation over tokens plus the strategy that produced it."""
    permutation: np.ndarray
    strategy: str
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        perm = np.asarray(self.permutation, dtype=np.int64)
        if not is_permutation(perm, perm.size):
            raise DegenerateInputError(f"{self.strategy} produced a non-bijective order")
        perm.setflags(write=False)
        object.__setattr__(self, "permutation", perm)

    @property
    def size(self) -> int:
        return int(self.permutation.size)

    def reversed(self) -> np.ndarray:
        return self.permutation[::-1]

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready view (without timing)."""
        out: dict[str, Any] = {"strategy": self.strategy, "permutation": self.permutation.tolist()}
        for key in ("root", "scores"):
            if key in self.metadata:
                value = self.metadata[key]
                out[key] = value.tolist() if isinstance(value, np.ndarray) else value
        return out


@dataclass(frozen=True)
class SasSequence:
    """Feature rows laid out segment by segment.

    A full SAS sequence has the four segments [cds, cds_rev, gcs, gcs_rev];
    ablations may carry fewer.
    """
    segments: tuple[np.ndarray, ...]
    permutations: tuple[np.ndarray, ...]
    labels: tuple[str, ...]

    @property
    def tokens(self) -> np.ndarray:
        """All segments stacked, shape (len, d)."""
        return np.concatenate(self.segments, axis=0)

    @property
    def token_indices(self) -> np.ndarray:
        """Token index held by each sequence position."""
        return np.concatenate(self.permutations)

    @property
    def length(self) -> int:
        return int(sum(s.shape[0] for s in self.segments))

    @property
    def dim(self) -> int:
        return int(self.segments[0].shape[1])


def centroid_nearest(centers: np.ndarray) -> int:
    """Token whose center is closest to the centroid of all centers."""
    centers = np.asarray(centers, dtype=np.float64)
    return argmin_first(np.linalg.norm(centers - centers.mean(axis=0), axis=1))


def _require_kind(graph: TokenGraph, kind: str) -> None:
    if graph.kind != kind:
        raise DegenerateInputError(f"expected a {kind} graph, got {graph.kind}")


def serialize_cds_bfs(graph: TokenGraph, centers: np.ndarray, knn_k: int = 6) -> SerializationOrder:
    """Breadth-first traversal from the centroid-nearest token.

    Each dequeued token appends its unvisited neighbours (its ``knn_k``
    strongest affinities) in descending affinity. Tokens never reached are
    appended by ascending distance to the centroid.
    """
    _require_kind(graph, "cds")
    centers = np.asarray(centers, dtype=np.float64)
    n = graph.size
    k = min(knn_k, n - 1)
    affinity = graph.affinity.copy()
    np.fill_diagonal(affinity, -np.inf)
    neighbours = [largest_k(affinity[i], k) for i in range(n)]

    root = centroid_nearest(centers)
    visited = np.zeros(n, dtype=bool)
    visited[root] = True
    order = [root]
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in neighbours[u]:
            if not visited[v]:
                visited[v] = True
                order.append(int(v))
                queue.append(int(v))

    if len(order) < n:
        dist = np.linalg.norm(centers - centers.mean(axis=0), axis=1)
        rest = [int(i) for i in stable_argsort(dist) if not visited[i]]
        logger.debug("BFS left %d tokens unreached; appending by centroid distance", len(rest))
        order.extend(rest)
    return SerializationOrder(np.array(order), "cds_bfs", {"root": root, "knn_k": k})


def _fiedler_order(eigenvalues: np.ndarray, eigenvectors: np.ndarray, centers: np.ndarray) -> SerializationOrder:
    positive = np.flatnonzero(eigenvalues > FIEDLER_EPS)
    if positive.size == 0:
        raise DegenerateInputError("no eigenvalue exceeds 1e-8; graph spectrum is degenerate")
    mode = int(positive[0])
    fiedler = eigenvectors[:, mode].copy()
    if fiedler[argmax_first(np.abs(fiedler))] < 0:
        fiedler = -fiedler
    root = centroid_nearest(centers)
    if rounded(fiedler[root]) > 0:
        fiedler = -fiedler
    order = stable_argsort(fiedler)
    return SerializationOrder(
        order,
        "cds_spectral",
        {"root": root, "scores": fiedler, "eigenvalue": float(eigenvalues[mode])},
    )


def serialize_cds_spectral(graph: TokenGraph, centers: np.ndarray, solver: str = "jacobi") -> SerializationOrder:
    """Sort tokens by the Fiedler vector of the symmetric-normalized Laplacian.

    The vector is signed so the centroid-nearest token sits on the negative
    side and therefore sorts early.
    """
    _require_kind(graph, "cds")
    lap = laplacian(graph.affinity, "symmetric_normalized")
    basis = sym_eig(lap, solver=solver, laplacian_mode="symmetric_normalized")
    return _fiedler_order(basis.eigenvalues, basis.eigenvectors, centers)


def serialize_cds_spectral_batch(
    graphs: Sequence[TokenGraph],
    centers: Sequence[np.ndarray],
) -> list[SerializationOrder]:
    """``serialize_cds_spectral`` on LAPACK for many equal-size graphs at once.

    The normalized Laplacians are stacked and decomposed in one batched
    ``eigh`` call.
    """
    if len(graphs) != len(centers) or not graphs:
        raise DimensionMismatchError(f"{len(graphs)} graphs for {len(centers)} center sets")
    for graph in graphs:
        _require_kind(graph, "cds")
    sizes = {graph.size for graph in graphs}
    if len(sizes) != 1:
        raise DimensionMismatchError(f"batched graphs must share one size, got {sorted(sizes)}")
    n = sizes.pop()
    w = np.stack([graph.affinity for graph in graphs]).astype(np.float64)
    diag = np.arange(n)
    w[:, diag, diag] = 0.0
    degree = w.sum(axis=2)
    if np.any(degree <= 0):
        raise DegenerateInputError("zero-degree node in a batched CDS graph")
    inv_sqrt = 1.0 / np.sqrt(degree)
    lap = np.eye(n) - inv_sqrt[:, :, None] * w * inv_sqrt[:, None, :]
    lap = 0.5 * (lap + np.swapaxes(lap, 1, 2))
    values, vectors = np.linalg.eigh(lap)
    return [_fiedler_order(values[b], vectors[b], np.asarray(centers[b], dtype=np.float64)) for b in range(len(graphs))]


def serialize_gcs(descriptor: HeatDescriptor) -> SerializationOrder:
    """Ascending heat-descriptor norm, starting from the lowest-curvature token."""
    scores = np.linalg.norm(descriptor.values, axis=1)
    order = stable_argsort(scores)
    return SerializationOrder(order, "gcs", {"root": int(order[0]), "scores": scores})


def quantize(centers: np.ndarray, bits: int) -> np.ndarray:
    """Per-axis grid cells over the centers' bounding box (padded by 1e-9)."""
    if not 1 <= bits <= MAX_CURVE_BITS:
        raise DegenerateInputError(f"curve bits must be in [1, {MAX_CURVE_BITS}], got {bits}")
    centers = np.asarray(centers, dtype=np.float64)
    lo = centers.min(axis=0)
    span = centers.max(axis=0) - lo + 1e-9
    cells = np.floor((centers - lo) / span * (1 << bits)).astype(np.int64)
    return np.clip(cells, 0, (1 << bits) - 1)


def morton_codes(cells: np.ndarray, bits: int) -> np.ndarray:
    """Interleave x, y, z cell bits; x takes the lowest bit of each triple."""
    codes = np.zeros(cells.shape[0], dtype=np.int64)
    for b in range(bits):
        for axis in range(3):
            codes |= ((cells[:, axis] >> b) & 1) << (3 * b + axis)
    return codes


def hilbert_codes(cells: np.ndarray, bits: int) -> np.ndarray:
    """3D Hilbert index of grid cells via the transpose algorithm."""
    x = [cells[:, axis].astype(np.int64).copy() for axis in range(3)]
    n = 3
    m = 1 << (bits - 1)

    # inverse undo
    q = m
    while q > 1:
        p = q - 1
        for i in range(n):
            high = (x[i] & q) != 0
            t = (x[0] ^ x[i]) & p
            x[0] = np.where(high, x[0] ^ p, x[0] ^ t)
            if i > 0:
                x[i] = np.where(high, x[i], x[i] ^ t)
        q >>= 1

    # gray encode
    for i in range(1, n):
        x[i] ^= x[i - 1]
    t = np.zeros_like(x[0])
    q = m
    while q > 1:
        t = np.where((x[n - 1] & q) != 0, t ^ (q - 1), t)
        q >>= 1
    for i in range(n):
        x[i] ^= t

    codes = np.zeros(cells.shape[0], dtype=np.int64)
    for b in range(bits - 1, -1, -1):
        for i in range(n):
            codes = (codes << 1) | ((x[i] >> b) & 1)
    return codes


def serialize_zorder(centers: np.ndarray, bits: int = 10) -> SerializationOrder:
    """Morton-code order of quantized centers."""
    codes = morton_codes(quantize(centers, bits), bits)
    return SerializationOrder(np.argsort(codes, kind="stable"), "zorder", {"scores": codes, "bits": bits})


def serialize_hilbert(centers: np.ndarray, bits: int = 10) -> SerializationOrder:
    """Hilbert-curve order of quantized centers."""
    codes = hilbert_codes(quantize(centers, bits), bits)
    return SerializationOrder(np.argsort(codes, kind="stable"), "hilbert", {"scores": codes, "bits": bits})


def curvature_proxy(relative_patches: np.ndarray) -> np.ndarray:
    """λ_min / (λ₁ + λ₂ + λ₃) of each patch covariance; 0 for collapsed patches."""
    dev = relative_patches - relative_patches.mean(axis=1, keepdims=True)
    cov = np.einsum("gsi,gsj->gij", dev, dev) / relative_patches.shape[1]
    eig = np.linalg.eigvalsh(cov)
    total = eig.sum(axis=1)
    return np.where(total > 0, np.clip(eig[:, 0], 0.0, None) / np.where(total > 0, total, 1.0), 0.0)


def serialize_baseline(strategy: str, token_set: TokenSet, seed: int = 0) -> SerializationOrder:
    """Coordinate-free baselines: FPS order, seeded random, centroid distance, PCA curvature."""
    n = token_set.size
    if strategy == "fps_order":
        return SerializationOrder(np.arange(n), strategy)
    if strategy == "random":
        perm = np.random.default_rng(seed).permutation(n)
        return SerializationOrder(perm, strategy, {"seed": seed})
    if strategy == "euclid_centroid_sort":
        centers = token_set.centers
        scores = np.linalg.norm(centers - centers.mean(axis=0), axis=1)
        return SerializationOrder(stable_argsort(scores), strategy, {"scores": scores})
    if strategy == "naive_curvature_sort":
        scores = curvature_proxy(token_set.relative_patch_points())
        return SerializationOrder(stable_argsort(scores), strategy, {"scores": scores})
    raise DegenerateInputError(f"unknown baseline strategy {strategy!r}")


def serialize(
    token_set: TokenSet,
    strategy: str,
    graph_cfg: GraphConfig | None = None,
    serial_cfg: SerializationConfig | None = None,
) -> SerializationOrder:
    """Dispatch any named strategy on a token set."""
    graph_cfg = graph_cfg or GraphConfig()
    serial_cfg = serial_cfg or SerializationConfig()
    centers = token_set.centers
    if strategy in ("cds_bfs", "cds_spectral"):
        graph = build_cds_graph(centers, graph_cfg.cds_scale)
        if strategy == "cds_bfs":
            return serialize_cds_bfs(graph, centers, graph_cfg.knn_k)
        return serialize_cds_spectral(graph, centers, graph_cfg.eig_solver)
    if strategy == "gcs":
        descriptor = curvature_descriptor(centers, graph_cfg.knn_k, graph_cfg.heat_times, graph_cfg.eig_solver)
        return serialize_gcs(descriptor)
    if strategy == "zorder":
        return serialize_zorder(centers, serial_cfg.curve_bits)
    if strategy == "hilbert":
        return serialize_hilbert(centers, serial_cfg.curve_bits)
    if strategy in BASELINE_STRATEGIES:
        return serialize_baseline(strategy, token_set, serial_cfg.random_seed)
    raise DegenerateInputError(f"unknown serialization strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")


def sas_orders(
    token_set: TokenSet,
    graph_cfg: GraphConfig | None = None,
    cds_variant: str = "cds_spectral",
) -> tuple[SerializationOrder, SerializationOrder]:
    """The (CDS, GCS) order pair that makes up an SAS sequence."""
    return serialize(token_set, cds_variant, graph_cfg), serialize(token_set, "gcs", graph_cfg)


def build_sequence(features: np.ndarray, orders: list[SerializationOrder], labels: list[str]) -> SasSequence:
    """Forward and reverse traversal of each order, segment after segment."""
    features = np.asarray(features, dtype=np.float64)
    segments, perms, names = [], [], []
    for order, label in zip(orders, labels):
        if order.size != features.shape[0]:
            raise DimensionMismatchError(f"order over {order.size} tokens cannot index {features.shape[0]} feature rows")
        for perm, suffix in ((order.permutation, ""), (order.reversed(), "_rev")):
            segments.append(features[perm])
            perms.append(np.asarray(perm))
            names.append(label + suffix)
    return SasSequence(tuple(segments), tuple(perms), tuple(names))


def build_sas_sequence(features: np.ndarray, order_cds: SerializationOrder, order_gcs: SerializationOrder) -> SasSequence:
    """[X_cds; X_rev(cds); X_gcs; X_rev(gcs)], total length 4G."""
    if order_cds.size != order_gcs.size:
        raise DimensionMismatchError(f"CDS order covers {order_cds.size} tokens, GCS order {order_gcs.size}")
    return build_sequence(features, [order_cds, order_gcs], ["cds", "gcs"])
