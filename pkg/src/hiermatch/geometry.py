"""Rigid motions and the confidence-weighted Kabsch solver."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import PointCloud
from .errors import DegenerateInput


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion x -> R @ x + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def is_valid(self, tol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.R.T @ self.R, np.eye(3), atol=tol)
            and abs(np.linalg.det(self.R) - 1.0) <= tol
        )

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.R.T + self.t

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


def compose(outer: RigidTransform, inner: RigidTransform) -> RigidTransform:
    """Transform equal to applying ``inner`` first, then ``outer``."""
    return RigidTransform(outer.R @ inner.R, outer.R @ inner.t + outer.t)


def invert(T: RigidTransform) -> RigidTransform:
    return RigidTransform(T.R.T, -T.R.T @ T.t)


def apply(T: RigidTransform, cloud: PointCloud) -> PointCloud:
    return PointCloud(T.transform_points(cloud.points), cloud.intensity)


def rot_x(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation Rz(yaw) @ Ry(pitch) @ Rx(roll), angles in degrees."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def axis_angle(axis, deg: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    a = np.deg2rad(deg)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * (K @ K)


def rotation_angle_deg(R: np.ndarray) -> float:
    """Rotation angle of ``R`` in degrees, in [0, 180].

    Uses atan2 of the skew and trace parts; arccos of the trace alone loses
    about 1e-6 degrees of resolution near zero.
    """
    cos = (np.trace(R) - 1.0) / 2.0
    sin = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.degrees(np.arctan2(sin, cos)))


def project_to_so3(M: np.ndarray) -> np.ndarray:
    """Closest proper rotation to ``M`` in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def weighted_kabsch(
    source: np.ndarray, target: np.ndarray, weights: Optional[np.ndarray] = None
) -> RigidTransform:
    """Closed-form argmin over proper rigid motions of
    ``sum_i w_i * ||target_i - (R @ source_i + t)||^2``.

    Raises DegenerateInput for fewer than 3 pairs, negative or all-zero
    weights, or a numerically rank-0 weighted cross-covariance.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    tgt = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if src.shape != tgt.shape:
        raise DegenerateInput(f"source/target shapes differ: {src.shape} vs {tgt.shape}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateInput(f"need at least 3 correspondences, got {n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise DegenerateInput(f"weight count {w.shape[0]} != correspondence count {n}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DegenerateInput("weights must be finite and non-negative")
    wsum = w.sum()
    if not wsum > 0:
        raise DegenerateInput("weight sum must be positive")
    w = w / wsum

    mu_s = w @ src
    mu_t = w @ tgt
    ds = src - mu_s
    dt = tgt - mu_t
    H = (ds * w[:, None]).T @ dt
    U, S, Vt = np.linalg.svd(H)

    spread = np.sqrt(w @ np.sum(ds * ds, axis=1)) * np.sqrt(w @ np.sum(dt * dt, axis=1))
    if S[0] <= 1e-12 * spread or spread == 0.0:
        raise DegenerateInput("weighted cross-covariance is numerically rank-0")

    # flip the weakest axis if the SVD solution is a reflection
    d = 1.0 if np.linalg.det(Vt.T @ U.T) >= 0 else -1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = mu_t - R @ mu_s
    return RigidTransform(R, t)


def kabsch_objective(T: RigidTransform, source, target, weights) -> float:
    r = np.asarray(target) - T.transform_points(source)
    return float(np.asarray(weights) @ np.sum(r * r, axis=1))
