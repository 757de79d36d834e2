"""Synthetic shapes and the domain-shift perturbations applied to them."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .config import SHAPE_KINDS
from .errors import DegenerateInputError
from .pointcloud import PointCloud, normalize_unit_sphere
from .ranking import stable_argsort

PERTURBATION_KINDS = ("none", "rotate", "gaussian_noise", "occlude")
MIN_SHAPE_POINTS = 64

# folded sheet: two flat panels joined by a half-cylinder
FOLD_PANEL = 2.5
FOLD_GAP = 0.5
FOLD_WIDTH = 1.0


def _unit_directions(rng: np.random.Generator, count: int) -> np.ndarray:
    v = rng.standard_normal((count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    # antipodal pairs keep the centroid exactly at the origin
    half = _unit_directions(rng, (n + 1) // 2)
    return np.vstack([half, -half])[:n]


def _torus(rng: np.random.Generator, n: int, major: float = 1.0, minor: float = 0.35) -> np.ndarray:
    u = rng.uniform(0.0, 2.0 * np.pi, n)
    v = rng.uniform(0.0, 2.0 * np.pi, n)
    ring = major + minor * np.cos(v)
    return np.column_stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)])


def fold_path(s: np.ndarray) -> np.ndarray:
    """Map arclength along the folded sheet's profile to (x, y)."""
    radius = FOLD_GAP / 2.0
    arc = np.pi * radius
    top = s < FOLD_PANEL
    bend = (s >= FOLD_PANEL) & (s < FOLD_PANEL + arc)
    xy = np.empty((s.size, 2))
    xy[top] = np.column_stack([FOLD_PANEL - s[top], np.full(top.sum(), radius)])
    phi = (s[bend] - FOLD_PANEL) / radius
    xy[bend] = np.column_stack([-radius * np.sin(phi), radius * np.cos(phi)])
    rest = ~(top | bend)
    xy[rest] = np.column_stack([s[rest] - FOLD_PANEL - arc, np.full(rest.sum(), -radius)])
    return xy


def _folded_sheet(rng: np.random.Generator, n: int) -> np.ndarray:
    length = 2.0 * FOLD_PANEL + np.pi * FOLD_GAP / 2.0
    xy = fold_path(rng.uniform(0.0, length, n))
    return np.column_stack([xy, rng.uniform(0.0, FOLD_WIDTH, n)])


def _box_surface(rng: np.random.Generator, center: np.ndarray, size: np.ndarray, n: int) -> np.ndarray:
    """Uniform samples on the surface of an axis-aligned box."""
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]] * 2)
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    local = rng.uniform(-0.5, 0.5, (n, 3))
    axis = faces % 3
    local[np.arange(n), axis] = np.where(faces < 3, -0.5, 0.5)
    return center + local * size


def _box_composite(rng: np.random.Generator, n: int) -> np.ndarray:
    """A table: one top slab and four legs."""
    parts = [(np.array([0.0, 0.0, 0.45]), np.array([1.6, 1.0, 0.1]))]
    for sx in (-0.7, 0.7):
        for sy in (-0.4, 0.4):
            parts.append((np.array([sx, sy, 0.0]), np.array([0.1, 0.1, 0.8])))
    areas = np.array([2 * (s[0] * s[1] + s[0] * s[2] + s[1] * s[2]) for _, s in parts])
    counts = np.floor(n * areas / areas.sum()).astype(int)
    counts[0] += n - counts.sum()
    return np.vstack([_box_surface(rng, c, s, k) for (c, s), k in zip(parts, counts)])


def _spiked_sphere(rng: np.random.Generator, n: int, spikes: int = 8) -> np.ndarray:
    dirs = _unit_directions(rng, n)
    tips = _unit_directions(rng, spikes)
    reach = np.clip(dirs @ tips.T, 0.0, None).max(axis=1) ** 24
    return dirs * (1.0 + 0.6 * reach)[:, None]


_GENERATORS = {
    "sphere": _sphere,
    "torus": _torus,
    "folded_sheet": _folded_sheet,
    "box_composite": _box_composite,
    "spiked_sphere": _spiked_sphere,
}


def gen_shape(kind: str, n_points: int = 1024, seed: int = 0) -> PointCloud:
    """Deterministic parametric sample of a named shape (not normalized)."""
    if kind not in _GENERATORS:
        raise DegenerateInputError(f"unknown shape kind {kind!r}; choose from {', '.join(SHAPE_KINDS)}")
    if n_points < MIN_SHAPE_POINTS:
        raise DegenerateInputError(f"n_points must be >= {MIN_SHAPE_POINTS}, got {n_points}")
    rng = np.random.default_rng([SHAPE_KINDS.index(kind), seed])
    return PointCloud(_GENERATORS[kind](rng, n_points), source_tag=kind)


@dataclass(frozen=True)
class Perturbation:
    """A domain shift applied to a cloud.

    ``rotate`` uses ``axis``/``angle`` when an axis is given and a uniformly
    random rotation drawn from ``seed`` otherwise.
    """
    kind: str = "none"
    seed: int = 0
    axis: tuple[float, float, float] | None = None
    angle: float = 0.0
    std: float = 0.0
    fraction: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise DegenerateInputError(f"unknown perturbation {self.kind!r}")
        if self.std < 0:
            raise DegenerateInputError("noise std must be >= 0")
        if not 0.0 <= self.fraction <= 0.9:
            raise DegenerateInputError("occlusion fraction must be in [0, 0.9]")

    @property
    def label(self) -> str:
        if self.kind == "rotate":
            return f"rotate(seed={self.seed})" if self.axis is None else f"rotate(angle={self.angle:g})"
        if self.kind == "gaussian_noise":
            return f"noise(std={self.std:g},seed={self.seed})"
        if self.kind == "occlude":
            return f"occlude(fraction={self.fraction:g},seed={self.seed})"
        return "none"

    def rotation(self) -> np.ndarray:
        if self.axis is None:
            return random_rotation(self.seed)
        axis = np.asarray(self.axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise DegenerateInputError("rotation axis must be non-zero")
        return Rotation.from_rotvec(axis / norm * self.angle).as_matrix()


def random_rotation(seed: int) -> np.ndarray:
    """Uniformly random rotation matrix."""
    return Rotation.random(random_state=seed).as_matrix()


def rotate_cloud(cloud: PointCloud, matrix: np.ndarray) -> PointCloud:
    """Rigid rotation about the centroid."""
    c = cloud.centroid
    return PointCloud((cloud.points - c) @ np.asarray(matrix).T + c, cloud.source_tag)


def kept_count(n_points: int, fraction: float) -> int:
    """Points surviving occlusion: ceil((1 - fraction) * P)."""
    return math.ceil(round((1.0 - fraction) * n_points, 9))


def perturb(cloud: PointCloud, p: Perturbation, patch_size: int = 32) -> PointCloud:
    """Apply a perturbation; occlusion is not followed by renormalization."""
    if p.kind == "none":
        return cloud
    if p.kind == "rotate":
        if p.axis is not None and p.angle == 0.0:
            return cloud
        return rotate_cloud(cloud, p.rotation())
    if p.kind == "gaussian_noise":
        if p.std == 0.0:
            return cloud
        noise = np.random.default_rng(p.seed).normal(0.0, p.std, cloud.points.shape)
        return PointCloud(cloud.points + noise, cloud.source_tag)

    keep = kept_count(len(cloud), p.fraction)
    if keep < 4 * patch_size:
        raise DegenerateInputError(
            f"occlusion keeps {keep} points, fewer than 4 x patch size ({4 * patch_size})"
        )
    direction = _unit_directions(np.random.default_rng(p.seed), 1)[0]
    height = (cloud.points - cloud.centroid) @ direction
    survivors = np.sort(stable_argsort(height)[:keep])
    return PointCloud(cloud.points[survivors], cloud.source_tag)


def build_corpus(kinds: list[str], seeds: list[int], n_points: int) -> list[tuple[str, PointCloud]]:
    """Normalized corpus shapes keyed ``kind-seed``, kinds outermost."""
    return [
        (f"{kind}-{seed}", normalize_unit_sphere(gen_shape(kind, n_points, seed)))
        for kind in kinds
        for seed in seeds
    ]
