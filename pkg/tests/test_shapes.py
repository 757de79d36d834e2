"""Tests for the synthetic shape corpus and perturbations."""

import numpy as np
import pytest

from sas_kit.config import SHAPE_KINDS
from sas_kit.errors import DegenerateInputError
from sas_kit.graph import geodesic_distances, pairwise_distances
from sas_kit.shapes import Perturbation, build_corpus, gen_shape, kept_count, perturb


class TestGenShape:
    """Test parametric shape sampling."""

    @pytest.mark.parametrize("kind", SHAPE_KINDS)
    def test_point_count_and_tag(self, kind):
        cloud = gen_shape(kind, 300, 1)
        assert cloud.points.shape == (300, 3)
        assert cloud.source_tag == kind

    def test_seeded(self):
        np.testing.assert_array_equal(gen_shape("torus", 128, 5).points, gen_shape("torus", 128, 5).points)
        assert not np.array_equal(gen_shape("torus", 128, 5).points, gen_shape("torus", 128, 6).points)

    def test_sphere_is_centered(self):
        cloud = gen_shape("sphere", 256, 0)
        np.testing.assert_allclose(cloud.centroid, 0.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(cloud.points, axis=1), 1.0)

    def test_folded_sheet_geodesics_exceed_straight_lines(self):
        points = gen_shape("folded_sheet", 512, 0).points
        top = np.flatnonzero(points[:, 1] > 0)
        bottom = np.flatnonzero(points[:, 1] < 0)
        i = top[np.argmax(points[top, 0])]
        j = bottom[np.argmax(points[bottom, 0])]
        geo = geodesic_distances(points, 6)
        assert geo[i, j] / pairwise_distances(points)[i, j] >= 2.0

    def test_unknown_kind(self):
        with pytest.raises(DegenerateInputError):
            gen_shape("teapot")

    def test_too_few_points(self):
        with pytest.raises(DegenerateInputError):
            gen_shape("sphere", 10)

    def test_corpus_order(self):
        corpus = build_corpus(["torus", "sphere"], [0, 1], 128)
        assert [key for key, _ in corpus] == ["torus-0", "torus-1", "sphere-0", "sphere-1"]
        assert np.max(np.linalg.norm(corpus[0][1].points, axis=1)) == pytest.approx(1.0)


class TestPerturb:
    """Test rotations, noise and occlusion."""

    def test_rotation_is_rigid(self):
        cloud = gen_shape("box_composite", 200, 0)
        rotated = perturb(cloud, Perturbation("rotate", seed=4))
        np.testing.assert_allclose(pairwise_distances(rotated.points), pairwise_distances(cloud.points), atol=1e-12)
        np.testing.assert_allclose(rotated.centroid, cloud.centroid, atol=1e-12)
        assert not np.allclose(rotated.points, cloud.points)

    def test_axis_angle_rotation(self):
        cloud = gen_shape("sphere", 64, 0)
        quarter = perturb(cloud, Perturbation("rotate", axis=(0.0, 0.0, 2.0), angle=np.pi / 2))
        expected = np.column_stack([-cloud.points[:, 1], cloud.points[:, 0], cloud.points[:, 2]])
        np.testing.assert_allclose(quarter.points, expected, atol=1e-12)

    def test_zero_angle_and_zero_noise_are_no_ops(self):
        cloud = gen_shape("torus", 128, 0)
        assert perturb(cloud, Perturbation("rotate", axis=(1.0, 0.0, 0.0), angle=0.0)) is cloud
        assert perturb(cloud, Perturbation("gaussian_noise", std=0.0)) is cloud

    def test_noise_is_seeded(self):
        cloud = gen_shape("torus", 128, 0)
        p = Perturbation("gaussian_noise", seed=2, std=0.01)
        np.testing.assert_array_equal(perturb(cloud, p).points, perturb(cloud, p).points)
        assert not np.array_equal(perturb(cloud, p).points, cloud.points)

    def test_occlusion_keeps_ceiling_count(self):
        cloud = gen_shape("sphere", 1024, 0)
        kept = perturb(cloud, Perturbation("occlude", seed=1, fraction=0.3))
        assert kept_count(1024, 0.3) == 717
        assert len(kept) == 717
        assert kept.source_tag == "sphere"

    def test_occlusion_keeps_original_point_order(self):
        cloud = gen_shape("torus", 512, 0)
        kept = perturb(cloud, Perturbation("occlude", seed=0, fraction=0.5))
        rows = [int(np.flatnonzero((cloud.points == p).all(axis=1))[0]) for p in kept.points]
        assert rows == sorted(rows)

    def test_occlusion_too_aggressive(self):
        with pytest.raises(DegenerateInputError):
            perturb(gen_shape("sphere", 512, 0), Perturbation("occlude", fraction=0.9))

    def test_labels(self):
        assert Perturbation().label == "none"
        assert Perturbation("rotate", seed=3).label == "rotate(seed=3)"
        assert Perturbation("gaussian_noise", std=0.01).label == "noise(std=0.01,seed=0)"
        assert Perturbation("occlude", fraction=0.3).label == "occlude(fraction=0.3,seed=0)"

    @pytest.mark.parametrize("kwargs", [{"kind": "shear"}, {"kind": "gaussian_noise", "std": -1.0}, {"kind": "occlude", "fraction": 0.95}])
    def test_invalid_perturbation(self, kwargs):
        with pytest.raises(DegenerateInputError):
            Perturbation(**kwargs)
