"""Configuration tree, file loading and snapshots."""

import dataclasses
import json
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import psutil
import yaml

from .errors import ConfigError

THREADS_ENV = "SAS_KIT_THREADS"

SHAPE_KINDS = ["sphere", "torus", "folded_sheet", "box_composite", "spiked_sphere"]


@dataclass
class TokenizerConfig:
    """FPS + KNN patch tokenization and the fixed patch encoder."""
    num_groups: int = 64
    group_size: int = 32
    embed_dim: int = 256
    projection_seed: int = 0
    # None means "point nearest the centroid"
    seed_index: int | None = None

    def __post_init__(self) -> None:
        if self.num_groups < 2:
            raise ConfigError("tokenizer.num_groups must be >= 2")
        if self.group_size < 1:
            raise ConfigError("tokenizer.group_size must be >= 1")
        if self.embed_dim < 16:
            raise ConfigError("tokenizer.embed_dim must be >= 16")


@dataclass
class GraphConfig:
    """Token graphs, spectra and heat descriptors."""
    knn_k: int = 6
    # None selects the median-based adaptive scale
    cds_scale: float | None = None
    gcs_scale: float | None = None
    heat_times: list[float] = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    sga_laplacian: str = "combinatorial"
    eig_solver: str = "jacobi"

    def __post_init__(self) -> None:
        if self.knn_k < 1:
            raise ConfigError("graph.knn_k must be >= 1")
        if self.sga_laplacian not in ("combinatorial", "symmetric_normalized"):
            raise ConfigError("graph.sga_laplacian must be 'combinatorial' or 'symmetric_normalized'")
        if self.eig_solver not in ("jacobi", "lapack"):
            raise ConfigError("graph.eig_solver must be 'jacobi' or 'lapack'")
        if not self.heat_times or any(t <= 0 for t in self.heat_times):
            raise ConfigError("graph.heat_times must be positive")


@dataclass
class SerializationConfig:
    """Coordinate-curve baselines and the random traversal."""
    curve_bits: int = 10
    random_seed: int = 0

    def __post_init__(self) -> None:
        if not 4 <= self.curve_bits <= 16:
            raise ConfigError("serialization.curve_bits must be in [4, 16]")


@dataclass
class ModelConfig:
    """Toy recurrent stack."""
    embed_dim: int = 256
    enc_layers: int = 4
    dec_layers: int = 2
    gate: str = "sigmoid_gate"
    direction: str = "bidirectional"
    a_norm: float = 0.9
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.gate not in ("identity", "sigmoid_gate"):
            raise ConfigError("model.gate must be 'identity' or 'sigmoid_gate'")
        if self.direction not in ("forward", "backward", "bidirectional"):
            raise ConfigError("model.direction must be 'forward', 'backward' or 'bidirectional'")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ConfigError("model layer counts must be >= 1")


@dataclass
class TrainConfig:
    """Masked-reconstruction training loop."""
    epochs: int = 30
    lr: float = 1e-4
    mask_ratio: float = 0.7
    cosine_decay: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError("train.mask_ratio must be in (0, 1)")
        if self.lr < 0:
            raise ConfigError("train.lr must be >= 0")


@dataclass
class AlignmentConfig:
    """Test-time spectral alignment.

    ``mode`` is one of ``adaptive_cosine``, ``fixed_alpha``, ``simple_shift``
    or ``off``. ``alpha`` is used by ``fixed_alpha`` and ``beta`` by
    ``simple_shift``; adaptive coefficients are clamped to ``[eps_low, 1]``.
    """
    mode: str = "adaptive_cosine"
    alpha: float = 0.5
    beta: float = 0.5
    eps_low: float = 0.05
    prototype_pooling: str = "pooled"

    def __post_init__(self) -> None:
        if self.mode not in ("adaptive_cosine", "fixed_alpha", "simple_shift", "off"):
            raise ConfigError(f"alignment.mode unknown: {self.mode}")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ConfigError("alignment.alpha and alignment.beta must be in [0, 1]")
        if not 0.0 < self.eps_low <= 0.5:
            raise ConfigError("alignment.eps_low must be in (0, 0.5]")
        if self.prototype_pooling not in ("pooled", "per_domain"):
            raise ConfigError("alignment.prototype_pooling must be 'pooled' or 'per_domain'")


@dataclass
class NprConfig:
    """Neighbourhood preservation settings."""
    k: int = 8
    h: int = 8
    r: int = 2

    def __post_init__(self) -> None:
        if self.k < 1 or self.h < 1 or self.r < 1:
            raise ConfigError("npr.k, npr.h and npr.r must be >= 1")


@dataclass
class CorpusConfig:
    """Synthetic shape corpus."""
    kinds: list[str] = field(default_factory=lambda: list(SHAPE_KINDS))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    n_points: int = 1024

    def __post_init__(self) -> None:
        unknown = [k for k in self.kinds if k not in SHAPE_KINDS]
        if unknown:
            raise ConfigError(f"corpus.kinds unknown: {', '.join(unknown)}")
        if self.n_points < 64:
            raise ConfigError("corpus.n_points must be >= 64")


@dataclass
class ToyTaskConfig:
    """Desk-scale sizes for the masked-reconstruction experiments."""
    num_groups: int = 32
    group_size: int = 16
    embed_dim: int = 32
    n_points: int = 512
    epochs: int = 30
    lr: float = 0.05
    rotated_eval: bool = True


@dataclass
class BenchConfig:
    """Benchmark drivers."""
    rotations_per_shape: int = 20
    drift_strategies: list[str] = field(default_factory=lambda: ["sas", "hilbert", "zorder"])
    complexity_sizes: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    ablation_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    ablation_variants: list[str] = field(default_factory=lambda: [
        "interleave_hdm", "no_cds", "no_gcs", "zorder", "hilbert", "fps_order", "random",
        "concat_hdm", "sga_on", "sga_off", "simple_shift",
    ])
    # benches override graph.eig_solver with this; None keeps the graph setting
    eig_solver: str | None = "lapack"

    def __post_init__(self) -> None:
        if self.rotations_per_shape < 1:
            raise ConfigError("bench.rotations_per_shape must be >= 1")
        if self.eig_solver not in (None, "jacobi", "lapack"):
            raise ConfigError("bench.eig_solver must be 'jacobi', 'lapack' or null")


@dataclass
class SasConfig:
    """Root configuration."""
    seed: int = 0
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    serialization: SerializationConfig = field(default_factory=SerializationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    npr: NprConfig = field(default_factory=NprConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    toy: ToyTaskConfig = field(default_factory=ToyTaskConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


def _build(cls: type, data: dict[str, Any], path: str) -> Any:
    """Instantiate a config dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"Unknown config key: {path}{key}")
        default = known[key].default_factory() if known[key].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{path}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"Invalid config section {path or 'root'}: {e}")


def config_from_dict(data: dict[str, Any]) -> SasConfig:
    """Build a ``SasConfig`` from a plain mapping."""
    return _build(SasConfig, data or {}, "")


def load_config(path: Path | str | None) -> SasConfig:
    """Load a YAML, JSON or TOML config file. ``None`` returns the defaults."""
    if path is None:
        return SasConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        content = path.read_text(encoding="utf-8")
        if path.suffix == ".toml":
            data = tomllib.loads(content)
        elif path.suffix == ".json":
            # yaml would read exponent floats such as 1e-12 as strings
            data = json.loads(content)
        else:
            data = yaml.safe_load(content)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}")
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}")
    return config_from_dict(data or {})


def config_snapshot(cfg: SasConfig) -> dict[str, Any]:
    """Plain-dict view of a config; loading it back reproduces the run."""
    return dataclasses.asdict(cfg)


def write_snapshot(cfg: SasConfig, path: Path) -> Path:
    """Write the config snapshot as sorted, indented JSON."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_snapshot(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def bench_config(cfg: SasConfig) -> SasConfig:
    """Copy of ``cfg`` whose graph section runs on ``bench.eig_solver``."""
    solver = cfg.bench.eig_solver
    if solver is None or solver == cfg.graph.eig_solver:
        return cfg
    return dataclasses.replace(cfg, graph=dataclasses.replace(cfg.graph, eig_solver=solver))


def worker_count() -> int:
    """Worker threads for benchmark cells: ``SAS_KIT_THREADS`` or physical cores."""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}")
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
