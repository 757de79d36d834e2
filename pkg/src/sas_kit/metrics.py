"""Chamfer distance and neighbourhood preservation rates."""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, DimensionMismatchError
from .graph import build_cds_graph, geodesic_graph, pairwise_distances
from .pointcloud import TokenSet
from .ranking import largest_k, ranks, smallest_k
from .serialization import SerializationOrder, serialize_cds_bfs

NPR_VARIANTS = ("bfs_reference", "topo", "geo")


@dataclass(frozen=True)
class NprSpec:
    """Which NPR to compute and with what radius."""
    variant: str = "topo"
    hops_or_k: int = 8
    window_radius: int = 8

    def __post_init__(self) -> None:
        if self.variant not in NPR_VARIANTS:
            raise DegenerateInputError(f"unknown NPR variant {self.variant!r}")
        if self.hops_or_k < 1 or self.window_radius < 1:
            raise DegenerateInputError("hops_or_k and window_radius must be >= 1")


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric L2 Chamfer distance: mean squared NN distance, both directions summed."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise DegenerateInputError("Chamfer distance needs two non-empty point sets")
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"point dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def hop_counts(adjacency: np.ndarray) -> np.ndarray:
    """Unweighted hop distance between every pair of tokens."""
    return shortest_path(adjacency.astype(np.float64), unweighted=True, directed=False)


def _rank_local(hop_sets: list[np.ndarray], order: SerializationOrder) -> list[set[int]]:
    """Hop neighbours kept within a rank distance equal to the hop-set size."""
    rank = ranks(order.permutation)
    kept = []
    for i, hood in enumerate(hop_sets):
        radius = hood.size
        kept.append({int(j) for j in hood if abs(int(rank[j]) - int(rank[i])) <= radius})
    return kept


def npr_bfs_reference(
    order: SerializationOrder,
    bfs_order: SerializationOrder,
    adjacency: np.ndarray,
    r: int = 2,
) -> float:
    """Overlap of rank-local r-hop neighbourhoods under an order and under BFS.

    Tokens whose BFS neighbourhood is empty are skipped; if none remain the
    value is 1.0.
    """
    n = order.size
    if bfs_order.size != n or adjacency.shape != (n, n):
        raise DimensionMismatchError("order, BFS order and graph must cover the same tokens")
    if r < 1:
        raise DegenerateInputError("r must be >= 1")
    hops = hop_counts(adjacency)
    hop_sets = [np.flatnonzero((hops[i] >= 1) & (hops[i] <= r)) for i in range(n)]
    ours = _rank_local(hop_sets, order)
    reference = _rank_local(hop_sets, bfs_order)
    fractions = [len(ours[i] & reference[i]) / len(reference[i]) for i in range(n) if reference[i]]
    return float(np.mean(fractions)) if fractions else 1.0


def window_pairs(sequence: np.ndarray, n: int, h: int) -> np.ndarray:
    """Boolean n×n matrix marking tokens that sit within h positions of each other somewhere in ``sequence``."""
    sequence = np.asarray(sequence, dtype=np.int64)
    window = np.zeros((n, n), dtype=bool)
    for offset in range(1, min(h, sequence.size - 1) + 1):
        a, b = sequence[:-offset], sequence[offset:]
        window[a, b] = True
        window[b, a] = True
    np.fill_diagonal(window, False)
    return window


def npr_window(
    order: SerializationOrder | Sequence[SerializationOrder],
    reference_neighbors: list[np.ndarray],
    h: int,
) -> float:
    """Fraction of each token's reference neighbours inside its ±h sequence window.

    With several orders (the CDS and GCS traversals of one SAS sequence) the
    window runs over the whole sequence, each order followed by its reverse,
    and a neighbour counts when any occurrence of the token has it in range.
    """
    if h < 1:
        raise DegenerateInputError("window radius h must be >= 1")
    orders = [order] if isinstance(order, SerializationOrder) else list(order)
    if not orders:
        raise DegenerateInputError("npr_window needs at least one order")
    n = orders[0].size
    if any(o.size != n for o in orders) or len(reference_neighbors) != n:
        raise DimensionMismatchError(f"{len(reference_neighbors)} neighbourhoods for orders over {n} tokens")
    hoods = [np.asarray(hood, dtype=np.int64) for hood in reference_neighbors]
    for i, hood in enumerate(hoods):
        if hood.size == 0:
            raise DegenerateInputError(f"token {i} has an empty reference neighbourhood")
    if isinstance(order, SerializationOrder):
        sequence = order.permutation
    else:
        sequence = np.concatenate([part for o in orders for part in (o.permutation, o.reversed())])
    window = window_pairs(sequence, n, h)
    total = sum(np.count_nonzero(window[i, hood]) / hood.size for i, hood in enumerate(hoods))
    return float(total) / n


def topo_neighbors(centers: np.ndarray, k: int) -> list[np.ndarray]:
    """k nearest token centers (Euclidean), ties to the smallest index."""
    centers = np.asarray(centers, dtype=np.float64)
    n = centers.shape[0]
    if k >= n:
        raise DegenerateInputError(f"k={k} must be smaller than the token count {n}")
    dist = pairwise_distances(centers)
    np.fill_diagonal(dist, np.inf)
    return [smallest_k(dist[i], k) for i in range(n)]


def geo_neighbors(features: np.ndarray, k: int) -> list[np.ndarray]:
    """k most cosine-similar feature rows, ties to the smallest index."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if k >= n:
        raise DegenerateInputError(f"k={k} must be smaller than the token count {n}")
    norms = np.linalg.norm(features, axis=1)
    unit = features / np.where(norms > 0, norms, 1.0)[:, None]
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    return [largest_k(sim[i], k) for i in range(n)]


def npr(
    spec: NprSpec,
    order: SerializationOrder | Sequence[SerializationOrder],
    token_set: TokenSet,
    knn_k: int = 6,
) -> float:
    """Dispatch on ``spec.variant``.

    ``bfs_reference`` uses ``hops_or_k`` as r and counts hops on the bridged
    geodesic KNN graph.
    """
    if spec.variant == "topo":
        return npr_window(order, topo_neighbors(token_set.centers, spec.hops_or_k), spec.window_radius)
    if spec.variant == "geo":
        return npr_window(order, geo_neighbors(token_set.features, spec.hops_or_k), spec.window_radius)
    first = order if isinstance(order, SerializationOrder) else order[0]
    centers = token_set.centers
    bfs = serialize_cds_bfs(build_cds_graph(centers), centers, knn_k)
    return npr_bfs_reference(first, bfs, geodesic_graph(centers, knn_k), spec.hops_or_k)
