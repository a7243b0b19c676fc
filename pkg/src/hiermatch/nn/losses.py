from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import RigidTransform


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def translation_loss(est: RigidTransform, gt: RigidTransform) -> float:
    return float(np.linalg.norm(gt.t - est.t))


def rotation_loss(est: RigidTransform, gt: RigidTransform) -> float:
    """Frobenius norm of ``R_est^T R_gt - I``."""
    return float(np.linalg.norm(est.R.T @ gt.R - np.eye(3)))


def loss_total(est: RigidTransform, gt: RigidTransform, cfg: LossConfig = LossConfig()) -> float:
    return translation_loss(est, gt) + cfg.alpha * rotation_loss(est, gt)


def loss_total_grad(est: RigidTransform, gt: RigidTransform, cfg: LossConfig = LossConfig()):
    """Gradient of ``loss_total`` w.r.t. ``(R_est, t_est)``; zero where a norm vanishes."""
    dt = est.t - gt.t
    nt = np.linalg.norm(dt)
    g_t = dt / nt if nt > 0 else np.zeros(3)
    M = est.R.T @ gt.R - np.eye(3)
    nm = np.linalg.norm(M)
    G = cfg.alpha * M / nm if nm > 0 else np.zeros((3, 3))
    g_R = gt.R @ G.T
    return g_R, g_t
