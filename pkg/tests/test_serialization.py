"""Tests for CDS, GCS, curve and baseline serializations."""

import itertools

import numpy as np
import pytest

from sas_kit.config import GraphConfig
from sas_kit.errors import DegenerateInputError, DimensionMismatchError
from sas_kit.graph import HeatDescriptor, build_cds_graph, knn_edges
from sas_kit.metrics import npr_bfs_reference
from sas_kit.pointcloud import PointCloud, TokenSet, normalize_unit_sphere, tokenize
from sas_kit.serialization import (
    STRATEGIES,
    SerializationOrder,
    build_sas_sequence,
    hilbert_codes,
    morton_codes,
    quantize,
    sas_orders,
    serialize,
    serialize_baseline,
    serialize_cds_bfs,
    serialize_cds_spectral,
    serialize_cds_spectral_batch,
    serialize_gcs,
    serialize_hilbert,
    serialize_zorder,
)
from sas_kit.shapes import Perturbation, gen_shape, perturb


def morton_oracle(cell: tuple[int, int, int], bits: int) -> int:
    out = ""
    for b in reversed(range(bits)):
        for axis in (2, 1, 0):
            out += str((cell[axis] >> b) & 1)
    return int(out, 2)


class TestSerializationOrder:
    """Test the order container."""

    def test_rejects_non_bijection(self):
        with pytest.raises(DegenerateInputError):
            SerializationOrder(np.array([0, 0, 1]), "random")

    def test_to_dict(self):
        order = SerializationOrder(np.array([2, 0, 1]), "gcs", {"root": 2, "scores": np.array([1.0, 2.0, 0.0])})
        d = order.to_dict()
        assert d["permutation"] == [2, 0, 1]
        assert d["root"] == 2
        assert d["scores"] == [1.0, 2.0, 0.0]


class TestCds:
    """Test BFS and spectral CDS."""

    def test_collinear_bfs_tie_rule(self):
        centers = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
        order = serialize_cds_bfs(build_cds_graph(centers), centers)
        assert order.permutation.tolist() == [1, 0, 2]

    def test_star_bfs_visits_leaves_by_affinity(self):
        centers = np.array([[0.0, 0, 0], [3, 0, 0], [0, 1, 0], [0, 0, -2], [-0.5, 0, 0]])
        order = serialize_cds_bfs(build_cds_graph(centers, 1.0), centers, knn_k=4)
        assert order.permutation.tolist() == [0, 4, 2, 3, 1]

    def test_bfs_visits_every_token_once(self, torus_tokens):
        order = serialize(torus_tokens, "cds_bfs")
        assert sorted(order.permutation.tolist()) == list(range(torus_tokens.size))

    def test_spectral_separates_clusters(self):
        rng = np.random.default_rng(1)
        centers = np.vstack([rng.normal(0.0, 0.1, (5, 3)), rng.normal(0.0, 0.1, (5, 3)) + [2.0, 0, 0]])
        result = serialize_cds_spectral(build_cds_graph(centers, 1.0), centers)
        assert result.metadata["eigenvalue"] > 1e-3
        order = result.permutation
        assert set(order[:5].tolist()) in ({0, 1, 2, 3, 4}, {5, 6, 7, 8, 9})

    def test_spectral_root_sorts_early(self, torus_tokens):
        order = serialize(torus_tokens, "cds_spectral")
        root = order.metadata["root"]
        assert order.metadata["scores"][root] <= 1e-9

    def test_npr_against_bfs_is_a_rate(self):
        cloud = normalize_unit_sphere(gen_shape("sphere", 1024, 0))
        tokens = tokenize(cloud, num_groups=32, group_size=16, dim=16)
        centers = tokens.centers
        graph = build_cds_graph(centers)
        bfs = serialize_cds_bfs(graph, centers, 6)
        spectral = serialize_cds_spectral(graph, centers)
        assert 0.0 <= npr_bfs_reference(spectral, bfs, knn_edges(centers, 6), 2) <= 1.0
        assert npr_bfs_reference(bfs, bfs, knn_edges(centers, 6), 2) == 1.0

    def test_batch_matches_single_lapack(self):
        """One batched decomposition gives the per-graph LAPACK orders."""
        token_sets = [
            tokenize(normalize_unit_sphere(gen_shape(kind, 256, 0)), num_groups=16, group_size=8, dim=16)
            for kind in ("sphere", "torus", "folded_sheet")
        ]
        graphs = [build_cds_graph(t.centers) for t in token_sets]
        batch = serialize_cds_spectral_batch(graphs, [t.centers for t in token_sets])
        for order, graph, tokens in zip(batch, graphs, token_sets):
            single = serialize_cds_spectral(graph, tokens.centers, "lapack")
            assert order.permutation.tolist() == single.permutation.tolist()
            assert order.metadata["root"] == single.metadata["root"]

    def test_batch_rejects_mixed_sizes(self, torus_tokens):
        small = build_cds_graph(torus_tokens.centers[:8])
        full = build_cds_graph(torus_tokens.centers)
        with pytest.raises(DimensionMismatchError):
            serialize_cds_spectral_batch([small, full], [torus_tokens.centers[:8], torus_tokens.centers])

    def test_requires_cds_graph(self, torus_tokens):
        graph = build_cds_graph(torus_tokens.centers)
        wrong = type(graph)(graph.affinity, "gcs", graph.kernel_scale)
        with pytest.raises(DegenerateInputError):
            serialize_cds_bfs(wrong, torus_tokens.centers)


class TestGcs:
    """Test heat-descriptor ordering."""

    def test_sorts_by_descriptor_norm(self):
        descriptor = HeatDescriptor(np.array([1.0]), np.array([[3.0], [1.0], [2.0]]))
        order = serialize_gcs(descriptor)
        assert order.permutation.tolist() == [1, 2, 0]
        assert order.metadata["root"] == 1

    def test_equal_descriptors_give_identity(self):
        descriptor = HeatDescriptor(np.array([1.0, 2.0]), np.ones((5, 2)))
        assert serialize_gcs(descriptor).permutation.tolist() == [0, 1, 2, 3, 4]

    def test_spiked_sphere_rotation_invariance(self):
        cloud = normalize_unit_sphere(gen_shape("spiked_sphere", 512, 0))
        base = serialize(tokenize(cloud, 24, 8, 16), "gcs").permutation
        for seed in range(3):
            rotated = perturb(cloud, Perturbation("rotate", seed=seed))
            assert np.array_equal(serialize(tokenize(rotated, 24, 8, 16), "gcs").permutation, base)


class TestCurves:
    """Test Z-order and Hilbert baselines."""

    def test_cube_corners_follow_morton_codes(self):
        corners = np.array(list(itertools.product([0.0, 1.0], repeat=3)))
        cells = quantize(corners, 1)
        codes = morton_codes(cells, 1)
        assert sorted(codes.tolist()) == list(range(8))
        order = serialize_zorder(corners, 4).permutation
        assert np.all(np.diff(morton_codes(quantize(corners, 4), 4)[order]) > 0)

    def test_morton_matches_oracle(self):
        cells = np.array(list(itertools.product(range(4), repeat=3)))
        codes = morton_codes(cells, 2)
        assert codes.tolist() == [morton_oracle(tuple(c), 2) for c in cells]

    def test_hilbert_is_a_bijection_on_the_grid(self):
        cells = np.array(list(itertools.product(range(4), repeat=3)))
        assert sorted(hilbert_codes(cells, 2).tolist()) == list(range(64))

    def test_hilbert_neighbours_are_adjacent_cells(self):
        cells = np.array(list(itertools.product(range(4), repeat=3)))
        walk = cells[np.argsort(hilbert_codes(cells, 2))]
        steps = np.abs(np.diff(walk, axis=0)).sum(axis=1)
        assert (steps == 1).all()

    def test_first_order_hilbert_visits_adjacent_corners(self):
        cells = np.array(list(itertools.product(range(2), repeat=3)))
        walk = cells[np.argsort(hilbert_codes(cells, 1))]
        assert walk[0].tolist() == [0, 0, 0]
        assert (np.abs(np.diff(walk, axis=0)).sum(axis=1) == 1).all()

    @pytest.mark.parametrize("strategy", [serialize_zorder, serialize_hilbert])
    def test_rotation_changes_curve_orders(self, strategy):
        centers = np.random.default_rng(5).uniform(-1, 1, size=(40, 3))
        quarter = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert not np.array_equal(strategy(centers).permutation, strategy(centers @ quarter.T).permutation)

    def test_bits_out_of_range(self):
        with pytest.raises(DegenerateInputError):
            quantize(np.zeros((3, 3)), 0)


class TestBaselines:
    """Test coordinate-free baseline orders."""

    def test_fps_order_is_identity(self, torus_tokens):
        assert serialize_baseline("fps_order", torus_tokens).permutation.tolist() == list(range(torus_tokens.size))

    def test_random_is_seeded(self, torus_tokens):
        a = serialize_baseline("random", torus_tokens, seed=3)
        b = serialize_baseline("random", torus_tokens, seed=3)
        np.testing.assert_array_equal(a.permutation, b.permutation)

    def test_centroid_sort_inner_ring_first(self):
        angles = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        ring = np.stack([np.cos(angles), np.sin(angles), np.zeros(8)], axis=1)
        cloud = PointCloud(np.vstack([ring, 3 * ring]))
        tokens = tokenize(cloud, num_groups=16, group_size=1, dim=16)
        order = serialize_baseline("euclid_centroid_sort", tokens).permutation
        radii = np.linalg.norm(tokens.centers[order], axis=1)
        np.testing.assert_allclose(radii[:8], 1.0)
        np.testing.assert_allclose(radii[8:], 3.0)

    def test_planar_patch_before_spherical_patch(self):
        rng = np.random.default_rng(0)
        grid = np.array([[x, y, 0.0] for x in range(3) for y in range(3)], dtype=float)
        ball = rng.standard_normal((9, 3))
        ball = ball / np.linalg.norm(ball, axis=1, keepdims=True) + np.array([10.0, 0, 0])
        cloud = PointCloud(np.vstack([ball, grid]))
        tokens = TokenSet(cloud, np.array([0, 9]), np.array([list(range(9)), list(range(9, 18))]), np.zeros((2, 16)))
        assert serialize_baseline("naive_curvature_sort", tokens).permutation.tolist() == [1, 0]

    def test_unknown_strategy(self, torus_tokens):
        with pytest.raises(DegenerateInputError):
            serialize(torus_tokens, "octree")


class TestSasSequence:
    """Test the four-segment sequence."""

    def test_hand_expansion(self):
        features = np.array([[1.0], [2.0]])
        seq = build_sas_sequence(
            features, SerializationOrder(np.array([0, 1]), "cds_spectral"), SerializationOrder(np.array([1, 0]), "gcs")
        )
        assert seq.tokens[:, 0].tolist() == [1, 2, 2, 1, 2, 1, 1, 2]
        assert seq.labels == ("cds", "cds_rev", "gcs", "gcs_rev")

    def test_reversed_segments_and_length(self, torus_tokens):
        cds, gcs = sas_orders(torus_tokens, GraphConfig())
        seq = build_sas_sequence(torus_tokens.features, cds, gcs)
        assert seq.length == 4 * torus_tokens.size
        np.testing.assert_array_equal(seq.segments[1], seq.segments[0][::-1])
        np.testing.assert_array_equal(seq.segments[3], seq.segments[2][::-1])

    def test_mismatched_orders(self):
        with pytest.raises(DimensionMismatchError):
            build_sas_sequence(np.zeros((2, 4)), SerializationOrder(np.arange(2), "a"), SerializationOrder(np.arange(3), "b"))

    @pytest.mark.parametrize("strategy", STRATEGIES)
    def test_every_strategy_is_a_bijection(self, torus_tokens, strategy):
        order = serialize(torus_tokens, strategy)
        assert sorted(order.permutation.tolist()) == list(range(torus_tokens.size))
