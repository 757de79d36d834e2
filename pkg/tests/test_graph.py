"""Tests for token graphs, Laplacians, the Jacobi solver and heat descriptors."""

import json

import numpy as np
import pytest
from scipy.linalg import expm

from sas_kit.errors import ConvergenceError, DegenerateInputError
from sas_kit.graph import (
    HeatDescriptor,
    build_cds_graph,
    build_gcs_graph,
    curvature_descriptor,
    gaussian_affinity,
    geodesic_distances,
    geodesic_graph,
    graph_basis,
    graph_debug_dict,
    heat_descriptor,
    heat_scales,
    jacobi_eigh,
    knn_edges,
    laplacian,
    median_scale,
    pairwise_distances,
    sym_eig,
)


def floyd_warshall(weights: np.ndarray) -> np.ndarray:
    dist = weights.copy()
    n = dist.shape[0]
    for k in range(n):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    return dist


def random_symmetric(n: int, seed: int) -> np.ndarray:
    m = np.random.default_rng(seed).standard_normal((n, n))
    return m + m.T


@pytest.fixture
def centers() -> np.ndarray:
    return np.random.default_rng(3).uniform(-1, 1, size=(20, 3))


class TestKernels:
    """Test distances, scales and Gaussian affinities."""

    def test_median_scale(self):
        dist = pairwise_distances(np.array([[0.0, 0, 0], [1, 0, 0], [3, 0, 0]]))
        assert median_scale(dist) == pytest.approx(2.0)

    def test_median_scale_skips_coincident_majority(self):
        points = np.array([[0.0, 0, 0]] * 4 + [[1.0, 0, 0]])
        assert median_scale(pairwise_distances(points)) == pytest.approx(1.0)

    def test_median_scale_all_zero(self):
        with pytest.raises(DegenerateInputError):
            median_scale(np.zeros((3, 3)))

    def test_gaussian_values(self):
        dist = np.array([[0.0, 2.0], [2.0, 0.0]])
        w = gaussian_affinity(dist, 2.0)
        assert w[0, 1] == pytest.approx(np.exp(-1.0))
        assert w[0, 0] == 1.0

    def test_cds_graph_symmetric_unit_diagonal(self, centers):
        graph = build_cds_graph(centers)
        np.testing.assert_array_equal(graph.affinity, graph.affinity.T)
        np.testing.assert_array_equal(np.diag(graph.affinity), 1.0)
        assert graph.kernel_scale == pytest.approx(median_scale(pairwise_distances(centers)))

    def test_fixed_scale(self, centers):
        assert build_cds_graph(centers, 0.1).kernel_scale == 0.1

    def test_knn_edges_symmetric_without_loops(self, centers):
        adjacency = knn_edges(centers, 3)
        np.testing.assert_array_equal(adjacency, adjacency.T)
        assert not adjacency.diagonal().any()
        assert (adjacency.sum(axis=1) >= 3).all()


class TestLaplacian:
    """Test combinatorial and normalized Laplacians."""

    def test_combinatorial_rows_sum_to_zero(self, centers):
        lap = laplacian(build_cds_graph(centers).affinity)
        np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-12)
        assert np.linalg.eigvalsh(lap).min() > -1e-10

    def test_normalized_spectrum_in_range(self, centers):
        values = np.linalg.eigvalsh(laplacian(build_cds_graph(centers).affinity, "symmetric_normalized"))
        assert values.min() > -1e-10
        assert values.max() < 2.0 + 1e-10

    def test_rejects_asymmetric(self):
        with pytest.raises(DegenerateInputError):
            laplacian(np.array([[0.0, 1.0], [0.5, 0.0]]))

    def test_rejects_isolated_node(self):
        with pytest.raises(DegenerateInputError):
            laplacian(np.array([[1.0, 0.0], [0.0, 1.0]]))

    def test_unknown_mode(self):
        with pytest.raises(DegenerateInputError):
            laplacian(np.ones((2, 2)), "random_walk")


class TestEigenSolver:
    """Test the Jacobi solver against LAPACK."""

    @pytest.mark.parametrize("n", [2, 5, 12, 17])
    def test_eigenvalues_match_lapack(self, n):
        m = random_symmetric(n, n)
        values, vectors = jacobi_eigh(m)
        np.testing.assert_allclose(np.sort(values), np.linalg.eigvalsh(m), atol=1e-9)
        np.testing.assert_allclose(vectors.T @ vectors, np.eye(n), atol=1e-10)

    def test_reconstructs_matrix(self):
        m = random_symmetric(10, 1)
        np.testing.assert_allclose(sym_eig(m).reconstruct(), m, atol=1e-9)

    def test_ascending_and_sign_convention(self):
        basis = sym_eig(random_symmetric(9, 2))
        assert np.all(np.diff(basis.eigenvalues) >= 0)
        for k in range(9):
            column = basis.eigenvectors[:, k]
            assert column[np.argmax(np.abs(column))] > 0

    def test_lapack_solver_agrees(self):
        m = random_symmetric(8, 4)
        jac, lap = sym_eig(m, "jacobi"), sym_eig(m, "lapack")
        np.testing.assert_allclose(jac.eigenvalues, lap.eigenvalues, atol=1e-9)
        np.testing.assert_allclose(np.abs(jac.eigenvectors), np.abs(lap.eigenvectors), atol=1e-7)

    def test_laplacian_has_zero_eigenvalue(self, centers):
        _, basis = graph_basis(build_cds_graph(centers), "combinatorial")
        assert basis.eigenvalues[0] == pytest.approx(0.0, abs=1e-9)
        assert basis.laplacian_mode == "combinatorial"

    def test_sweep_limit(self):
        with pytest.raises(ConvergenceError) as info:
            jacobi_eigh(random_symmetric(6, 0), max_sweeps=0)
        assert info.value.sweeps == 0

    def test_rejects_asymmetric(self):
        with pytest.raises(DegenerateInputError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_unknown_solver(self):
        with pytest.raises(DegenerateInputError):
            sym_eig(np.eye(2), solver="arpack")


class TestGeodesic:
    """Test geodesic distances on the bridged KNN graph."""

    def test_matches_floyd_warshall(self, centers):
        adjacency = geodesic_graph(centers, 4)
        weights = np.where(adjacency, pairwise_distances(centers), np.inf)
        np.fill_diagonal(weights, 0.0)
        np.testing.assert_allclose(geodesic_distances(centers, 4), floyd_warshall(weights), atol=1e-12)

    def test_metric_properties(self, centers):
        geo = geodesic_distances(centers, 3)
        np.testing.assert_array_equal(geo, geo.T)
        np.testing.assert_array_equal(np.diag(geo), 0.0)
        assert (geo >= pairwise_distances(centers) - 1e-12).all()
        n = geo.shape[0]
        for k in range(n):
            assert (geo <= geo[:, k:k + 1] + geo[k:k + 1, :] + 1e-12).all()

    def test_disconnected_clusters_are_bridged(self):
        rng = np.random.default_rng(0)
        points = np.vstack([rng.normal(0, 0.05, (6, 3)), rng.normal(5, 0.05, (6, 3))])
        geo = geodesic_distances(points, 2)
        assert np.isfinite(geo).all()

    def test_too_few_tokens(self):
        with pytest.raises(DegenerateInputError):
            geodesic_distances(np.zeros((1, 3)))


class TestHeat:
    """Test heat scales and descriptors against the matrix exponential."""

    def test_diagonal_matches_expm(self, centers):
        lap, basis = graph_basis(build_cds_graph(centers), "combinatorial")
        scales = heat_scales(basis, [0.1, 1.0])
        descriptor = heat_descriptor(basis, scales)
        for s, tau in enumerate(scales):
            np.testing.assert_allclose(descriptor.values[:, s], np.diag(expm(-tau * lap)), atol=1e-9)

    def test_trace_is_sum_of_exponentials(self, centers):
        _, basis = graph_basis(build_cds_graph(centers), "combinatorial")
        scales = heat_scales(basis, [0.01, 0.1, 1.0, 10.0])
        descriptor = heat_descriptor(basis, scales)
        expected = np.exp(-np.outer(basis.eigenvalues, scales)).sum(axis=0)
        np.testing.assert_allclose(descriptor.values.sum(axis=0), expected, rtol=1e-8)

    def test_scales_normalized_by_largest_eigenvalue(self, centers):
        _, basis = graph_basis(build_cds_graph(centers), "combinatorial")
        np.testing.assert_allclose(heat_scales(basis, [1.0, 2.0]) * basis.eigenvalues[-1], [1.0, 2.0])

    def test_descending_scales_rejected(self, centers):
        _, basis = graph_basis(build_cds_graph(centers), "combinatorial")
        with pytest.raises(DegenerateInputError):
            heat_descriptor(basis, [1.0, 0.5])

    def test_curvature_descriptor_is_rotation_invariant(self, centers):
        q, _ = np.linalg.qr(np.random.default_rng(9).standard_normal((3, 3)))
        a = curvature_descriptor(centers, 4)
        b = curvature_descriptor(centers @ q.T, 4)
        np.testing.assert_allclose(a.values, b.values, atol=1e-9)

    def test_gcs_graph_is_rotation_invariant(self, centers):
        q, _ = np.linalg.qr(np.random.default_rng(11).standard_normal((3, 3)))
        a = build_gcs_graph(curvature_descriptor(centers, 4))
        b = build_gcs_graph(curvature_descriptor(centers @ q.T + [0.5, -1.0, 2.0], 4))
        assert a.kernel_scale == pytest.approx(b.kernel_scale, rel=1e-9)
        np.testing.assert_allclose(a.affinity, b.affinity, atol=1e-9)

    def test_gcs_degenerate_fallback(self):
        descriptor = HeatDescriptor(np.array([0.1, 1.0]), np.ones((5, 2)))
        graph = build_gcs_graph(descriptor)
        assert graph.degenerate
        np.testing.assert_array_equal(graph.affinity, np.ones((5, 5)))

    def test_debug_dump_is_json(self, centers):
        graph = build_cds_graph(centers)
        lap, basis = graph_basis(graph, "combinatorial")
        dump = json.loads(json.dumps(graph_debug_dict(graph, lap, basis)))
        assert dump["kind"] == "cds"
        assert len(dump["eigenvalues"]) == centers.shape[0]
        assert len(dump["laplacian"][0]) == centers.shape[0]
