"""Token graphs: CDS/GCS kernels, Laplacians, eigendecomposition, geodesics, heat descriptors."""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse.csgraph import connected_components, csgraph_from_dense, dijkstra

from .errors import ConvergenceError, DegenerateInputError, DimensionMismatchError
from .ranking import argmax_first, argmin_first, smallest_k

logger = logging.getLogger("sas_kit.graph")

LAPLACIAN_MODES = ("combinatorial", "symmetric_normalized")
DEFAULT_HEAT_TIMES = (0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class TokenGraph:
    """Dense Gaussian affinity over tokens.

    ``degenerate`` is set when the kernel scale could not be estimated and the
    all-ones fallback graph was returned instead.
    """
    affinity: np.ndarray
    kind: str
    kernel_scale: float
    degenerate: bool = False

    @property
    def size(self) -> int:
        return int(self.affinity.shape[0])


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as columns."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    laplacian_mode: str | None = None

    @property
    def size(self) -> int:
        return int(self.eigenvalues.shape[0])

    def reconstruct(self) -> np.ndarray:
        """Rebuild the decomposed matrix as Φ diag(λ) Φᵀ."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


@dataclass(frozen=True)
class HeatDescriptor:
    """Heat-kernel self-diffusion K_τ(i, i) per token (rows) and scale (columns)."""
    scales: np.ndarray
    values: np.ndarray

    @property
    def size(self) -> int:
        return int(self.values.shape[0])


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between the rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, 0.0)
    return dist


def median_scale(distances: np.ndarray) -> float:
    """Median of the off-diagonal upper-triangle entries of a distance matrix.

    If zeros (coincident tokens) make up the median, the median of the strictly
    positive entries is used instead.
    """
    distances = np.asarray(distances, dtype=np.float64)
    iu = np.triu_indices(distances.shape[0], k=1)
    values = distances[iu]
    positive = values[values > 0]
    if positive.size == 0:
        raise DegenerateInputError("all pairwise distances are zero; kernel scale undefined")
    scale = float(np.median(values))
    if scale <= 0:
        scale = float(np.median(positive))
    return scale


def gaussian_affinity(distances: np.ndarray, scale: float) -> np.ndarray:
    """exp(-d² / scale²), symmetrized, unit diagonal."""
    w = np.exp(-(distances ** 2) / scale ** 2)
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 1.0)
    return w


def build_cds_graph(centers: np.ndarray, scale: float | None = None) -> TokenGraph:
    """Centroid Distance Spectrum graph: Gaussian kernel over center distances."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape[0] < 2:
        raise DegenerateInputError("a token graph needs at least 2 tokens")
    dist = pairwise_distances(centers)
    sigma = float(scale) if scale is not None else median_scale(dist)
    if sigma <= 0:
        raise DegenerateInputError(f"kernel scale must be positive, got {sigma}")
    return TokenGraph(gaussian_affinity(dist, sigma), kind="cds", kernel_scale=sigma)


def knn_edges(centers: np.ndarray, knn_k: int) -> np.ndarray:
    """Symmetric boolean adjacency of the undirected KNN graph (no self loops)."""
    dist = pairwise_distances(centers)
    n = dist.shape[0]
    k = min(knn_k, n - 1)
    masked = dist.copy()
    np.fill_diagonal(masked, np.inf)
    adjacency = np.zeros((n, n), dtype=bool)
    for i in range(n):
        adjacency[i, smallest_k(masked[i], k)] = True
    return adjacency | adjacency.T


def geodesic_graph(centers: np.ndarray, knn_k: int) -> np.ndarray:
    """KNN adjacency with minimum-distance bridges added until connected."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape[0] < 2:
        raise DegenerateInputError("geodesic distances need at least 2 tokens")
    if knn_k < 1:
        raise DegenerateInputError("knn_k must be >= 1")
    dist = pairwise_distances(centers)
    adjacency = knn_edges(centers, knn_k)
    while True:
        n_comp, labels = connected_components(adjacency, directed=False)
        if n_comp == 1:
            return adjacency
        across = np.where(labels[:, None] != labels[None, :], dist, np.inf)
        flat = argmin_first(across.ravel())
        i, j = divmod(flat, across.shape[1])
        logger.debug("bridging components at tokens %d-%d (%.4f)", i, j, dist[i, j])
        adjacency[i, j] = adjacency[j, i] = True


def geodesic_distances(centers: np.ndarray, knn_k: int = 6) -> np.ndarray:
    """All-pairs shortest paths over the bridged KNN graph of token centers."""
    dist = pairwise_distances(centers)
    adjacency = geodesic_graph(centers, knn_k)
    dense = np.where(adjacency, dist, np.inf)
    graph = csgraph_from_dense(dense, null_value=np.inf)
    geo = dijkstra(graph, directed=False)
    geo = np.minimum(geo, geo.T)
    np.fill_diagonal(geo, 0.0)
    return geo


def laplacian(weights: np.ndarray, mode: str = "combinatorial") -> np.ndarray:
    """Graph Laplacian of a symmetric nonnegative weight matrix.

    Self-loops carry no structure and are dropped before degrees are taken.
    """
    if mode not in LAPLACIAN_MODES:
        raise DegenerateInputError(f"unknown Laplacian mode {mode!r}")
    w = np.array(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DimensionMismatchError(f"weights must be square, got {w.shape}")
    if np.any(w < 0):
        raise DegenerateInputError("weights must be nonnegative")
    if not np.allclose(w, w.T, atol=1e-12, rtol=0):
        raise DegenerateInputError("weights must be symmetric")
    np.fill_diagonal(w, 0.0)
    degree = w.sum(axis=1)
    if np.any(degree <= 0):
        raise DegenerateInputError(f"zero-degree node(s): {np.flatnonzero(degree <= 0).tolist()}")
    if mode == "combinatorial":
        lap = np.diag(degree) - w
    else:
        inv_sqrt = 1.0 / np.sqrt(degree)
        lap = np.eye(w.shape[0]) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


@lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Pairings covering every (p, q) once per sweep, with disjoint pairs per round."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        p = np.array([a for a, _ in pairs], dtype=np.int64)
        q = np.array([b for _, b in pairs], dtype=np.int64)
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigen-solver for symmetric matrices.

    Each sweep visits every off-diagonal pair once, grouped into rounds of
    disjoint pairs that are rotated together. Stops once the off-diagonal
    Frobenius norm falls below ``tol`` times the matrix norm.
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    if n < 2 or norm == 0.0:
        return np.diag(a).copy(), v

    def off_norm() -> float:
        return float(np.linalg.norm(a - np.diag(np.diag(a))))

    schedule = _round_robin(n)
    sweeps = 0
    while off_norm() > tol * norm:
        if sweeps >= max_sweeps:
            raise ConvergenceError("Jacobi eigen-solver did not converge", residual=off_norm() / norm, sweeps=sweeps)
        for p, q in schedule:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            theta = np.where(active, (a[q, q] - a[p, p]) / np.where(active, 2.0 * apq, 1.0), 0.0)
            sign = np.where(theta >= 0, 1.0, -1.0)
            t = np.where(active, sign / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            row_p, row_q = a[p, :], a[q, :]
            a[p, :] = c[:, None] * row_p - s[:, None] * row_q
            a[q, :] = s[:, None] * row_p + c[:, None] * row_q
            col_p, col_q = a[:, p], a[:, q]
            a[:, p] = col_p * c - col_q * s
            a[:, q] = col_p * s + col_q * c
            vec_p, vec_q = v[:, p], v[:, q]
            v[:, p] = vec_p * c - vec_q * s
            v[:, q] = vec_p * s + vec_q * c
        sweeps += 1
    logger.debug("Jacobi converged in %d sweeps (n=%d)", sweeps, n)
    return np.diag(a).copy(), v


def sym_eig(
    matrix: np.ndarray,
    solver: str = "jacobi",
    tol: float = 1e-12,
    max_sweeps: int = 100,
    laplacian_mode: str | None = None,
) -> SpectralBasis:
    """Full symmetric eigendecomposition with ascending eigenvalues.

    Each eigenvector is signed so that its largest-magnitude entry (smallest
    index on ties) is positive.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"matrix must be square, got {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if not np.allclose(m, m.T, atol=1e-10 * scale, rtol=0):
        raise DegenerateInputError("sym_eig requires a symmetric matrix")
    m = 0.5 * (m + m.T)

    if solver == "jacobi":
        values, vectors = jacobi_eigh(m, tol=tol, max_sweeps=max_sweeps)
    elif solver == "lapack":
        values, vectors = np.linalg.eigh(m)
    else:
        raise DegenerateInputError(f"unknown eigen-solver {solver!r}")

    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    for k in range(vectors.shape[1]):
        lead = argmax_first(np.abs(vectors[:, k]))
        if vectors[lead, k] < 0:
            vectors[:, k] = -vectors[:, k]
    values.setflags(write=False)
    vectors.setflags(write=False)
    return SpectralBasis(values, vectors, laplacian_mode)


def graph_basis(graph: TokenGraph, mode: str, solver: str = "jacobi") -> tuple[np.ndarray, SpectralBasis]:
    """Laplacian of a token graph and its spectral basis."""
    lap = laplacian(graph.affinity, mode)
    return lap, sym_eig(lap, solver=solver, laplacian_mode=mode)


def heat_scales(basis: SpectralBasis, times: tuple[float, ...] | list[float] = DEFAULT_HEAT_TIMES) -> np.ndarray:
    """Diffusion scales τ_s = t_s / λ_max, making descriptors size-invariant."""
    lam_max = float(basis.eigenvalues[-1])
    if lam_max <= 0:
        raise DegenerateInputError("spectrum has no positive eigenvalue; heat scales undefined")
    return np.asarray(times, dtype=np.float64) / lam_max


def heat_descriptor(basis: SpectralBasis, scales: np.ndarray | list[float]) -> HeatDescriptor:
    """Diagonal of the heat kernel, K_τ(i, i) = Σ_k exp(-λ_k τ) φ_k(i)², at each scale."""
    scales = np.asarray(scales, dtype=np.float64)
    if scales.ndim != 1 or scales.size == 0 or np.any(scales <= 0):
        raise DegenerateInputError("heat scales must be a non-empty list of positive values")
    if np.any(np.diff(scales) < 0):
        raise DegenerateInputError("heat scales must be ascending")
    decay = np.exp(-np.outer(basis.eigenvalues, scales))
    values = (basis.eigenvectors ** 2) @ decay
    return HeatDescriptor(scales, values)


def curvature_descriptor(
    centers: np.ndarray,
    knn_k: int = 6,
    times: tuple[float, ...] | list[float] = DEFAULT_HEAT_TIMES,
    solver: str = "jacobi",
) -> HeatDescriptor:
    """Multi-scale heat descriptor on the geodesic token graph.

    Geodesic distances feed a Gaussian kernel at their median scale; the heat
    kernel is taken over that kernel's combinatorial Laplacian.
    """
    geo = geodesic_distances(centers, knn_k)
    weights = gaussian_affinity(geo, median_scale(geo))
    _, basis = graph_basis(TokenGraph(weights, kind="geodesic", kernel_scale=0.0), "combinatorial", solver)
    return heat_descriptor(basis, heat_scales(basis, times))


def build_gcs_graph(descriptor: HeatDescriptor, scale: float | None = None) -> TokenGraph:
    """Geodesic Curvature Spectrum graph: Gaussian kernel over descriptor distances.

    Identical descriptors leave the adaptive scale undefined; the all-ones
    graph with ``degenerate=True`` is returned in that case.
    """
    dist = pairwise_distances(descriptor.values)
    if scale is not None:
        gamma = float(scale)
    else:
        try:
            gamma = median_scale(dist)
        except DegenerateInputError:
            logger.warning("all heat descriptors are identical; GCS graph falls back to unit weights")
            n = descriptor.size
            return TokenGraph(np.ones((n, n)), kind="gcs", kernel_scale=1.0, degenerate=True)
    return TokenGraph(gaussian_affinity(dist, gamma), kind="gcs", kernel_scale=gamma)


def graph_debug_dict(graph: TokenGraph, lap: np.ndarray, basis: SpectralBasis) -> dict:
    """Row-major JSON-ready dump of a graph, its Laplacian and its spectrum."""
    return {
        "kind": graph.kind,
        "kernel_scale": graph.kernel_scale,
        "degenerate": graph.degenerate,
        "laplacian_mode": basis.laplacian_mode,
        "affinity": graph.affinity.tolist(),
        "laplacian": lap.tolist(),
        "eigenvalues": basis.eigenvalues.tolist(),
        "eigenvectors": basis.eigenvectors.tolist(),
    }
