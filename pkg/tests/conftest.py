"""Shared fixtures: small clouds and a desk-sized config."""

from pathlib import Path

import numpy as np
import pytest
import yaml

from sas_kit.config import SasConfig, config_from_dict
from sas_kit.pointcloud import PointCloud, TokenSet, normalize_unit_sphere, save_cloud, tokenize
from sas_kit.shapes import gen_shape


def small_config_dict() -> dict:
    return {
        "seed": 0,
        "tokenizer": {"num_groups": 16, "group_size": 8, "embed_dim": 16},
        "corpus": {"kinds": ["sphere", "torus"], "seeds": [0], "n_points": 256},
        "toy": {"num_groups": 8, "group_size": 8, "embed_dim": 16, "n_points": 128, "epochs": 2, "lr": 0.05},
        "model": {"embed_dim": 16, "enc_layers": 1, "dec_layers": 1},
        "bench": {
            "rotations_per_shape": 5,
            "drift_strategies": ["sas", "zorder"],
            "complexity_sizes": [8, 16],
            "ablation_seeds": [0],
            "ablation_variants": ["interleave_hdm", "zorder"],
        },
    }


@pytest.fixture
def small_config() -> SasConfig:
    return config_from_dict(small_config_dict())


@pytest.fixture
def random_cloud() -> PointCloud:
    rng = np.random.default_rng(42)
    return PointCloud(rng.standard_normal((200, 3)))


@pytest.fixture
def torus_tokens() -> TokenSet:
    cloud = normalize_unit_sphere(gen_shape("torus", 256, 0))
    return tokenize(cloud, num_groups=16, group_size=8, dim=16)


@pytest.fixture
def config_file(tmp_path) -> Path:
    path = tmp_path / "sas.yaml"
    path.write_text(yaml.safe_dump(small_config_dict()), encoding="utf-8")
    return path


@pytest.fixture
def torus_file(tmp_path) -> Path:
    return save_cloud(normalize_unit_sphere(gen_shape("torus", 256, 0)), tmp_path / "torus.xyz")
