"""Tests for config loading, validation and snapshots."""

import json

import pytest

from sas_kit.config import (
    THREADS_ENV,
    SasConfig,
    bench_config,
    config_from_dict,
    config_snapshot,
    load_config,
    worker_count,
    write_snapshot,
)
from sas_kit.errors import ConfigError


class TestLoadConfig:
    """Test YAML, JSON and TOML loading."""

    def test_defaults(self):
        cfg = load_config(None)
        assert cfg == SasConfig()
        assert cfg.tokenizer.num_groups == 64
        assert cfg.graph.heat_times == [0.01, 0.1, 1.0, 10.0]

    def test_yaml(self, config_file):
        cfg = load_config(config_file)
        assert cfg.tokenizer.num_groups == 16
        assert cfg.corpus.kinds == ["sphere", "torus"]
        assert cfg.graph.knn_k == 6

    def test_json_keeps_exponent_floats(self, tmp_path):
        path = tmp_path / "sas.json"
        path.write_text(json.dumps({"graph": {"cds_scale": 1e-3}, "train": {"lr": 1e-5}}))
        cfg = load_config(path)
        assert cfg.graph.cds_scale == 1e-3
        assert cfg.train.lr == 1e-5

    def test_toml(self, tmp_path):
        path = tmp_path / "sas.toml"
        path.write_text('seed = 7\n\n[alignment]\nmode = "fixed_alpha"\nalpha = 0.25\n')
        cfg = load_config(path)
        assert cfg.seed == 7
        assert cfg.alignment.mode == "fixed_alpha"
        assert cfg.alignment.alpha == 0.25

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("graph: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("seed = = 1\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestValidation:
    """Test unknown keys and out-of-range values."""

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="tokenizer.bogus"):
            config_from_dict({"tokenizer": {"bogus": 1}})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="Unknown config key: extra"):
            config_from_dict({"extra": True})

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigError):
            config_from_dict({"graph": 3})

    @pytest.mark.parametrize("data", [
        {"tokenizer": {"num_groups": 1}},
        {"tokenizer": {"embed_dim": 8}},
        {"graph": {"eig_solver": "arpack"}},
        {"serialization": {"curve_bits": 3}},
        {"train": {"mask_ratio": 1.0}},
        {"alignment": {"mode": "wild"}},
        {"alignment": {"eps_low": 0.0}},
        {"npr": {"h": 0}},
        {"corpus": {"kinds": ["teapot"]}},
        {"bench": {"rotations_per_shape": 0}},
        {"bench": {"eig_solver": "arpack"}},
    ])
    def test_out_of_range(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data)


class TestSnapshot:
    """Test that snapshots reproduce the config."""

    def test_dict_round_trip(self, small_config):
        assert config_from_dict(config_snapshot(small_config)) == small_config

    def test_written_snapshot_loads_back(self, tmp_path, small_config):
        path = write_snapshot(small_config, tmp_path / "run" / "config.json")
        assert load_config(path) == small_config
        assert path.read_text().endswith("\n")


class TestBenchConfig:
    """Test the solver override applied by benches."""

    def test_benches_default_to_lapack(self):
        cfg = SasConfig()
        assert cfg.graph.eig_solver == "jacobi"
        assert bench_config(cfg).graph.eig_solver == "lapack"
        assert cfg.graph.eig_solver == "jacobi"

    def test_null_keeps_graph_solver(self):
        cfg = config_from_dict({"bench": {"eig_solver": None}})
        assert bench_config(cfg) is cfg

    def test_only_the_solver_changes(self, small_config):
        swapped = bench_config(small_config)
        assert swapped.graph.knn_k == small_config.graph.knn_k
        assert swapped.tokenizer == small_config.tokenizer


class TestWorkerCount:
    """Test the thread-count override."""

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert worker_count() == 3

    def test_env_floor(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "0")
        assert worker_count() == 1

    def test_env_not_a_number(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "many")
        with pytest.raises(ConfigError):
            worker_count()

    def test_default_is_positive(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert worker_count() >= 1
