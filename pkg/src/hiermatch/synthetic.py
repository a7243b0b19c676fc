"""Structured synthetic scenes (ground, walls, boxes, clutter) with known motion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .cloud import PointCloud
from .errors import DegenerateInput
from .geometry import RigidTransform, axis_angle


@dataclass(frozen=True)
class ScenePairSpec:
    seed: int = 0
    n_planes: int = 6
    n_boxes: int = 30
    n_scatter: int = 400
    rotation_deg: float = 30.0
    translation_m: float = 3.0
    overlap: float = 0.7
    noise_sigma: float = 0.05
    extent_m: float = 50.0
    density: float = 40.0  # surface samples per square metre
    max_tilt_deg: float = 10.0  # rotation axis deviation from vertical

    def __post_init__(self):
        if min(self.rotation_deg, self.translation_m, self.noise_sigma) < 0:
            raise ValueError("ranges and noise must be non-negative")
        if not 0.0 < self.overlap <= 1.0:
            raise ValueError("overlap must lie in (0, 1]")
        if min(self.n_planes, self.n_boxes, self.n_scatter) < 0:
            raise ValueError("structure counts must be non-negative")


def _sample_rect(rng, origin, u, v, n) -> np.ndarray:
    a = rng.random((n, 1))
    b = rng.random((n, 1))
    return origin + a * u + b * v


def _ground(rng, extent, density) -> np.ndarray:
    n = int(extent * extent * density)
    xy = (rng.random((n, 2)) - 0.5) * extent
    # gentle undulation so the ground is not perfectly flat
    k = rng.uniform(0.05, 0.15, size=2)
    ph = rng.uniform(0, 2 * np.pi, size=2)
    z = 0.3 * np.sin(k[0] * xy[:, 0] + ph[0]) + 0.3 * np.sin(k[1] * xy[:, 1] + ph[1])
    return np.column_stack([xy, z])


def _wall(rng, extent, density) -> np.ndarray:
    length = rng.uniform(8.0, 20.0)
    height = rng.uniform(2.0, 6.0)
    yaw = rng.uniform(0, np.pi)
    centre = (rng.random(2) - 0.5) * extent * 0.8
    d = np.array([np.cos(yaw), np.sin(yaw), 0.0]) * length
    origin = np.array([centre[0], centre[1], 0.0]) - d / 2
    n = int(length * height * density)
    return _sample_rect(rng, origin, d, np.array([0.0, 0.0, height]), n)


def _box(rng, extent, density) -> np.ndarray:
    sx, sy = rng.uniform(1.0, 6.0, size=2)
    h = rng.uniform(0.5, 5.0)
    yaw = rng.uniform(0, np.pi)
    c, s = np.cos(yaw), np.sin(yaw)
    ex = np.array([c, s, 0.0]) * sx
    ey = np.array([-s, c, 0.0]) * sy
    ez = np.array([0.0, 0.0, h])
    centre = np.append((rng.random(2) - 0.5) * extent * 0.9, 0.0)
    o = centre - ex / 2 - ey / 2
    faces = [
        (o, ex, ez, sx * h),
        (o + ey, ex, ez, sx * h),
        (o, ey, ez, sy * h),
        (o + ex, ey, ez, sy * h),
        (o + ez, ex, ey, sx * sy),
    ]
    parts = [_sample_rect(rng, origin, u, v, max(1, int(area * density))) for origin, u, v, area in faces]
    return np.concatenate(parts)


def generate_scene(spec: ScenePairSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.n_planes + spec.n_boxes + spec.n_scatter == 0:
        raise DegenerateInput("scene needs at least one structure")
    parts = [_ground(rng, spec.extent_m, spec.density)]
    parts += [_wall(rng, spec.extent_m, spec.density) for _ in range(spec.n_planes)]
    parts += [_box(rng, spec.extent_m, spec.density) for _ in range(spec.n_boxes)]
    if spec.n_scatter:
        xy = (rng.random((spec.n_scatter, 2)) - 0.5) * spec.extent_m
        parts.append(np.column_stack([xy, rng.uniform(0.2, 4.0, spec.n_scatter)]))
    return np.concatenate(parts)


def sample_transform(spec: ScenePairSpec, rng: np.random.Generator) -> RigidTransform:
    """Rotation about a near-vertical axis by at most ``rotation_deg`` and a
    translation of norm at most ``translation_m``."""
    tilt = np.deg2rad(rng.uniform(0, spec.max_tilt_deg))
    az = rng.uniform(0, 2 * np.pi)
    axis = np.array([np.sin(tilt) * np.cos(az), np.sin(tilt) * np.sin(az), np.cos(tilt)])
    angle = rng.uniform(-spec.rotation_deg, spec.rotation_deg)
    direction = rng.normal(size=3) * np.array([1.0, 1.0, 0.1])
    direction /= np.linalg.norm(direction)
    t = direction * rng.uniform(0, spec.translation_m)
    return RigidTransform(axis_angle(axis, angle), t)


def _crop(pts: np.ndarray, centre, normal, keep: float) -> np.ndarray:
    if keep >= 1.0:
        return np.ones(len(pts), dtype=bool)
    proj = (pts - centre) @ normal
    return proj <= np.quantile(proj, keep)


def _jitter(rng, normal, deg=10.0) -> np.ndarray:
    ang = np.deg2rad(rng.uniform(-deg, deg))
    c, s = np.cos(ang), np.sin(ang)
    return np.array([c * normal[0] - s * normal[1], s * normal[0] + c * normal[1], normal[2]])


def generate_pair(spec: ScenePairSpec) -> Tuple[PointCloud, PointCloud, RigidTransform]:
    """Return ``(src, tgt, gt)`` with ``tgt ~= gt(src)`` on the overlapping part.

    Each cloud keeps ``1 / (2 - overlap)`` of the scene, cut by opposite
    half-spaces, so the shared region is ``overlap`` of either cloud.
    """
    rng = np.random.default_rng(spec.seed)
    scene = generate_scene(spec, rng)
    gt = sample_transform(spec, rng)
    src = scene + rng.normal(scale=spec.noise_sigma, size=scene.shape) if spec.noise_sigma else scene.copy()
    tgt = gt.transform_points(scene)
    if spec.noise_sigma:
        tgt = tgt + rng.normal(scale=spec.noise_sigma, size=scene.shape)

    keep = 1.0 / (2.0 - spec.overlap)
    az = rng.uniform(0, 2 * np.pi)
    u = np.array([np.cos(az), np.sin(az), 0.0])
    centre = scene.mean(axis=0)
    src_mask = _crop(src, centre, _jitter(rng, u), keep)
    tgt_mask = _crop(tgt, gt.transform_points(centre[None])[0], gt.R @ -_jitter(rng, u), keep)
    return PointCloud(src[src_mask]), PointCloud(tgt[tgt_mask]), gt
