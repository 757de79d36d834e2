"""Point-cloud ingestion, normalization, FPS and KNN patch tokenization."""

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import TokenizerConfig
from .errors import DegenerateInputError, DimensionMismatchError, ParseError
from .ranking import argmax_first, argmin_first, stable_argsort_rows

logger = logging.getLogger("sas_kit.pointcloud")

MIN_POINTS = 4
# mean (3) + covariance upper triangle (6) + min (3) + max (3)
STAT_WIDTH = 15
CLOUD_FORMATS = ("xyz_ascii", "ply_ascii")


@dataclass(frozen=True)
class PointCloud:
    """Raw 3D points with an optional provenance tag."""
    points: np.ndarray
    source_tag: str | None = None

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise DimensionMismatchError(f"points must have shape (P, 3), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise DegenerateInputError("point coordinates must be finite")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class TokenSet:
    """G patch tokens of a parent cloud.

    ``center_indices`` are FPS selections in selection order, ``patches`` hold
    S point indices per token and ``features`` the encoded patch vectors.
    """
    cloud: PointCloud
    center_indices: np.ndarray
    patches: np.ndarray
    features: np.ndarray

    def __post_init__(self) -> None:
        if self.patches.ndim != 2 or self.patches.shape[0] != self.center_indices.shape[0]:
            raise DimensionMismatchError("patches must have one row per center")
        if self.size < 2:
            raise DegenerateInputError("a token set needs at least 2 tokens")
        if not np.all(np.isfinite(self.features)):
            raise DegenerateInputError("patch features must be finite")

    @property
    def size(self) -> int:
        return int(self.center_indices.shape[0])

    @property
    def patch_size(self) -> int:
        return int(self.patches.shape[1])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def centers(self) -> np.ndarray:
        return self.cloud.points[self.center_indices]

    def patch_points(self) -> np.ndarray:
        """Patch members as a (G, S, 3) array of absolute coordinates."""
        return self.cloud.points[self.patches]

    def relative_patch_points(self) -> np.ndarray:
        """Patch members relative to their own center, shape (G, S, 3)."""
        return self.patch_points() - self.centers[:, None, :]

    def with_features(self, features: np.ndarray) -> "TokenSet":
        """Copy of this token set carrying replacement features."""
        if features.shape[0] != self.size:
            raise DimensionMismatchError(f"expected {self.size} feature rows, got {features.shape[0]}")
        return TokenSet(self.cloud, self.center_indices, self.patches, np.asarray(features, dtype=np.float64))


def _parse_floats(tokens: list[str], line_no: int) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric value in row: {' '.join(tokens)!r}", line=line_no)


def _load_xyz(lines: list[str]) -> list[list[float]]:
    rows = []
    for line_no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.replace(",", " ").split()
        if len(tokens) < 3:
            raise ParseError(f"expected at least 3 columns, got {len(tokens)}", line=line_no)
        # extra columns are ignored
        rows.append(_parse_floats(tokens[:3], line_no))
    return rows


def _load_ply(lines: list[str]) -> list[list[float]]:
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", line=1)

    # element name -> (count, property names)
    elements: list[tuple[str, int, list[str]]] = []
    header_end = None
    for line_no, raw in enumerate(lines[1:], 2):
        parts = raw.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        keyword = parts[0]
        if keyword == "format":
            if len(parts) < 3 or parts[1] != "ascii" or parts[2] != "1.0":
                raise ParseError(f"only 'format ascii 1.0' is supported, got {raw.strip()!r}", line=line_no)
        elif keyword == "element":
            if len(parts) != 3:
                raise ParseError(f"malformed element line {raw.strip()!r}", line=line_no)
            elements.append((parts[1], int(parts[2]), []))
        elif keyword == "property":
            if not elements:
                raise ParseError("property before any element", line=line_no)
            # 'property list <count type> <item type> <name>' keeps the name last too
            elements[-1][2].append(parts[-1])
        elif keyword == "end_header":
            header_end = line_no
            break
        else:
            raise ParseError(f"unexpected header keyword {keyword!r}", line=line_no)

    if header_end is None:
        raise ParseError("missing 'end_header'", line=len(lines))

    rows: list[list[float]] = []
    cursor = header_end  # index of the first body line in ``lines``
    for name, count, props in elements:
        if name != "vertex":
            cursor += count
            continue
        try:
            axes = [props.index(a) for a in ("x", "y", "z")]
        except ValueError:
            raise ParseError("vertex element lacks x/y/z properties", line=header_end)
        for offset in range(count):
            line_no = cursor + offset + 1
            if cursor + offset >= len(lines):
                raise ParseError("file ends before all vertices were read", line=line_no)
            tokens = lines[cursor + offset].split()
            if len(tokens) < len(props):
                raise ParseError(f"expected {len(props)} values, got {len(tokens)}", line=line_no)
            values = _parse_floats([tokens[a] for a in axes], line_no)
            rows.append(values)
        cursor += count
    return rows


def load_cloud(path: Path | str, format: str | None = None, source_tag: str | None = None) -> PointCloud:
    """Read an ASCII XYZ or ASCII PLY file; points are returned in file order, unnormalized."""
    path = Path(path)
    if format is None:
        format = "ply_ascii" if path.suffix.lower() == ".ply" else "xyz_ascii"
    if format not in CLOUD_FORMATS:
        raise ParseError(f"unknown cloud format {format!r}")
    if not path.exists():
        raise ParseError(f"file not found: {path}")

    lines = path.read_text(encoding="utf-8").splitlines()
    rows = _load_ply(lines) if format == "ply_ascii" else _load_xyz(lines)

    if len(rows) < MIN_POINTS:
        raise DegenerateInputError(f"{path} holds {len(rows)} points, at least {MIN_POINTS} required")
    logger.debug("loaded %d points from %s", len(rows), path)
    return PointCloud(np.array(rows, dtype=np.float64), source_tag=source_tag or path.stem)


def save_cloud(cloud: PointCloud, path: Path | str) -> Path:
    """Write a cloud as ASCII XYZ with full float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for x, y, z in cloud.points:
            f.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
    return path


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    """Center at the centroid and scale so the farthest point has norm 1."""
    centered = cloud.points - cloud.centroid
    radius = float(np.max(np.linalg.norm(centered, axis=1)))
    scale = max(1.0, float(np.max(np.abs(cloud.points))))
    if radius <= 1e-12 * scale:
        raise DegenerateInputError("cannot normalize a cloud whose points all coincide")
    return PointCloud(centered / radius, source_tag=cloud.source_tag)


def default_seed_index(cloud: PointCloud) -> int:
    """Index of the point nearest the centroid."""
    return argmin_first(np.linalg.norm(cloud.points - cloud.centroid, axis=1))


def fps(cloud: PointCloud, count: int, seed_index: int | None = None) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the smallest index."""
    n = len(cloud)
    if count > n:
        raise DegenerateInputError(f"cannot sample {count} points from a cloud of {n}")
    if count < 1:
        raise DegenerateInputError("FPS count must be >= 1")
    if seed_index is None:
        seed_index = default_seed_index(cloud)
    if not 0 <= seed_index < n:
        raise DegenerateInputError(f"seed index {seed_index} out of range for {n} points")

    points = cloud.points
    selected = np.empty(count, dtype=np.int64)
    selected[0] = seed_index
    min_dist = np.linalg.norm(points - points[seed_index], axis=1)
    min_dist[seed_index] = -1.0
    for i in range(1, count):
        nxt = argmax_first(min_dist)
        selected[i] = nxt
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[nxt], axis=1))
        min_dist[selected[: i + 1]] = -1.0
    return selected


@lru_cache(maxsize=16)
def projection_matrix(dim: int, seed: int = 0) -> np.ndarray:
    """Seeded Gaussian projection from patch statistics to ``dim`` features.

    Rows are drawn in order, so the matrix for a smaller ``dim`` is the
    leading block of the matrix for a larger one (truncation semantics).
    """
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((dim, STAT_WIDTH)) / np.sqrt(STAT_WIDTH)
    matrix.setflags(write=False)
    return matrix


def patch_statistics(relative: np.ndarray) -> np.ndarray:
    """[mean, covariance upper triangle, min, max] of center-relative points.

    Accepts (S, 3) or (G, S, 3); returns (15,) or (G, 15).
    """
    rel = np.asarray(relative, dtype=np.float64)
    single = rel.ndim == 2
    if single:
        rel = rel[None]
    mean = rel.mean(axis=1)
    dev = rel - mean[:, None, :]
    cov = np.einsum("gsi,gsj->gij", dev, dev) / rel.shape[1]
    iu = np.triu_indices(3)
    stats = np.concatenate([mean, cov[:, iu[0], iu[1]], rel.min(axis=1), rel.max(axis=1)], axis=1)
    return stats[0] if single else stats


def encode_patch(patch_points: np.ndarray, center: np.ndarray, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Deterministic feature of one patch from its center-relative statistics."""
    if dim < 16:
        raise DimensionMismatchError(f"feature dimension must be >= 16, got {dim}")
    relative = np.asarray(patch_points, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    return projection_matrix(dim, seed) @ patch_statistics(relative)


def encode_patches(patch_points: np.ndarray, centers: np.ndarray, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Vectorized ``encode_patch`` over (G, S, 3) patches."""
    if dim < 16:
        raise DimensionMismatchError(f"feature dimension must be >= 16, got {dim}")
    relative = patch_points - centers[:, None, :]
    return patch_statistics(relative) @ projection_matrix(dim, seed).T


def knn_group(
    cloud: PointCloud,
    center_indices: np.ndarray,
    patch_size: int,
    dim: int = 256,
    seed: int = 0,
) -> TokenSet:
    """Group the ``patch_size`` nearest points around each center and encode the patches."""
    n = len(cloud)
    if patch_size > n:
        raise DegenerateInputError(f"patch size {patch_size} exceeds cloud size {n}")
    center_indices = np.asarray(center_indices, dtype=np.int64)
    points = cloud.points
    centers = points[center_indices]
    dists = np.linalg.norm(centers[:, None, :] - points[None, :, :], axis=2)
    # the center always belongs to its own patch, even next to exact duplicates
    dists[np.arange(center_indices.size), center_indices] = -1.0
    patches = stable_argsort_rows(dists)[:, :patch_size]
    features = encode_patches(points[patches], centers, dim=dim, seed=seed)
    return TokenSet(cloud, center_indices, patches, features)


def tokenize(
    cloud: PointCloud,
    num_groups: int = 64,
    group_size: int = 32,
    dim: int = 256,
    seed: int = 0,
    seed_index: int | None = None,
) -> TokenSet:
    """FPS centers followed by KNN grouping; the usual entry point."""
    centers = fps(cloud, num_groups, seed_index)
    return knn_group(cloud, centers, group_size, dim=dim, seed=seed)


def tokenize_with(cloud: PointCloud, cfg: TokenizerConfig) -> TokenSet:
    """``tokenize`` driven by a tokenizer config section."""
    return tokenize(cloud, cfg.num_groups, cfg.group_size, cfg.embed_dim, cfg.projection_seed, cfg.seed_index)
