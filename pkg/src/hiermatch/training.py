"""Toy-scale training of the matching and confidence networks.

The keypoint detector stays frozen (run deterministically), so pyramids
are built once per pair.  Each pair contributes one loss per stage
(coarse, level-2 and level-1 refinement), with the previous stage's
transform treated as a constant.  Gradients reach the networks through
central differences of the loss with respect to the weighted Kabsch
inputs (virtual targets and confidences).
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .coarse import coarse_register
from .config import PipelineConfig
from .errors import DegenerateInput
from .fine import init_params, refine_layer, upsample_confidence
from .geometry import RigidTransform
from .io import synthetic_samples
from .nn import AdamState, ParamView, adam_step, save_params
from .pyramid import build_pyramid
from .synthetic import ScenePairSpec

log = logging.getLogger(__name__)

FROZEN = ("detector.",)


@dataclass(frozen=True)
class TrainConfig:
    n_pairs: int = 32
    epochs: int = 50
    lr: float = 0.0095
    alpha: float = 1.8
    seed: int = 0
    fd_step: float = 1e-5
    input_points: int = 2048
    n_keypoints: Tuple[int, int, int] = (256, 128, 64)
    desc_dims: Tuple[int, int, int] = (16, 32, 64)
    scene: ScenePairSpec = field(default_factory=ScenePairSpec)

    def pipeline(self, base: Optional[PipelineConfig] = None) -> PipelineConfig:
        base = base or PipelineConfig()
        return replace(
            base, mode="learned", detector="deterministic", input_points=self.input_points,
            n_keypoints=self.n_keypoints, desc_dims=self.desc_dims, alpha=self.alpha, seed=self.seed,
        )


# batched Kabsch and the loss it feeds

def kabsch_batch(src: np.ndarray, tgt: np.ndarray, w: np.ndarray):
    """Weighted Kabsch for a batch of target/weight sets sharing one source.

    ``src`` (M,3), ``tgt`` (B,M,3), ``w`` (B,M) -> ``R`` (B,3,3), ``t`` (B,3).
    Same solution as :func:`weighted_kabsch`, without its degeneracy checks.
    """
    w = w / w.sum(axis=1, keepdims=True)
    mu_s = w @ src
    mu_t = np.einsum("bm,bmk->bk", w, tgt)
    ds = src[None] - mu_s[:, None, :]
    dt = tgt - mu_t[:, None, :]
    H = np.einsum("bm,bmi,bmj->bij", w, ds, dt)
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.where(np.linalg.det(V @ Ut) >= 0, 1.0, -1.0)
    D = np.tile(np.eye(3), (len(w), 1, 1))
    D[:, 2, 2] = d
    R = V @ D @ Ut
    t = mu_t - np.einsum("bij,bj->bi", R, mu_s)
    return R, t


def stage_loss_batch(R, t, T_prev: RigidTransform, gt: RigidTransform, alpha: float) -> np.ndarray:
    """Loss of ``compose((R, t), T_prev)`` for each batch entry."""
    Rc = R @ T_prev.R
    tc = np.einsum("bij,j->bi", R, T_prev.t) + t
    lt = np.linalg.norm(tc - gt.t, axis=1)
    M = np.swapaxes(Rc, 1, 2) @ gt.R - np.eye(3)
    return lt + alpha * np.linalg.norm(M, axis=(1, 2))


def kabsch_fd_grad(
    src: np.ndarray,
    tgt: np.ndarray,
    w: np.ndarray,
    loss: Callable[[np.ndarray, np.ndarray], np.ndarray],
    rel_step: float = 1e-5,
) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient of ``loss(kabsch(src, tgt, w))`` with
    respect to ``tgt`` and ``w``.

    Steps are ``rel_step`` times the largest magnitude of each input.  A
    weight closer to zero than its step gets a forward difference instead.
    """
    m = len(src)
    h_y = rel_step * max(float(np.abs(tgt).max()), 1e-12)
    h_w = rel_step * max(float(np.abs(w).max()), 1e-12)
    n_y = 3 * m
    B = 2 * n_y + 2 * m
    T = np.broadcast_to(tgt, (B, m, 3)).copy()
    W = np.broadcast_to(w, (B, m)).copy()
    rows = np.arange(n_y)
    pi, pk = rows // 3, rows % 3
    T[rows, pi, pk] += h_y
    T[n_y + rows, pi, pk] -= h_y
    idx = np.arange(m)
    lo = np.where(w - h_w >= 0, w - h_w, w)
    W[2 * n_y + idx, idx] += h_w
    W[2 * n_y + m + idx, idx] = lo
    R, t = kabsch_batch(src, T, W)
    L = loss(R, t)
    g_y = ((L[:n_y] - L[n_y:2 * n_y]) / (2 * h_y)).reshape(m, 3)
    g_w = (L[2 * n_y:2 * n_y + m] - L[2 * n_y + m:]) / (w + h_w - lo)
    return g_y, g_w


# one training pair

@dataclass
class PairData:
    src_pyr: list
    tgt_pyr: list
    gt: RigidTransform


def pair_loss_and_grads(
    data: PairData, params: Dict[str, np.ndarray], cfg: PipelineConfig, alpha: float,
    rel_step: float = 1e-5, with_grads: bool = True,
) -> Tuple[float, List[float], Dict[str, np.ndarray]]:
    """Summed stage losses for one pair, and parameter gradients."""
    view = ParamView(params, requires_grad=with_grads, frozen=FROZEN)
    surrogate = None
    losses = []

    def account(src_pts, match, T_prev):
        nonlocal surrogate
        Y, w = match.points.data, match.confidences.data
        fn = lambda R, t: stage_loss_batch(R, t, T_prev, data.gt, alpha)  # noqa: E731
        R, t = kabsch_batch(src_pts, Y[None], w[None])
        losses.append(float(fn(R, t)[0]))
        T = RigidTransform(R[0], t[0]) @ T_prev
        if with_grads:
            g_y, g_w = kabsch_fd_grad(src_pts, Y, w, fn, rel_step)
            term = (match.points * g_y).sum() + (match.confidences * g_w).sum()
            surrogate = term if surrogate is None else surrogate + term
        return T

    coarse = coarse_register(data.src_pyr[2], data.tgt_pyr[2], cfg, view)
    T = account(data.src_pyr[2].keypoints, coarse.match, RigidTransform.identity())
    conf_pts, conf = data.src_pyr[2].keypoints, coarse.match.confidences.data
    for level in (2, 1):
        src_l = data.src_pyr[level - 1]
        mask0 = upsample_confidence(src_l.keypoints, conf_pts, conf, cfg.k_upsample) if cfg.mask else None
        res = refine_layer(src_l, data.tgt_pyr[level - 1], T, mask0, cfg, view)
        T = account(res.moved, res.match, T)
        conf_pts, conf = src_l.keypoints, res.match.confidences.data

    grads = {}
    if with_grads and surrogate is not None:
        surrogate.backward()
        grads = view.grads()
    return float(sum(losses)), losses, grads


# the loop

@dataclass
class TrainResult:
    params: Dict[str, np.ndarray]
    curve: List[Tuple[int, float, float]]  # (epoch, mean loss, lr)
    initial_loss: float
    final_loss: float
    seconds: float


def prepare_pairs(tc: TrainConfig, cfg: PipelineConfig) -> List[PairData]:
    spec = replace(tc.scene, seed=tc.seed)
    return [
        PairData(build_pyramid(s.src, cfg), build_pyramid(s.tgt, cfg), s.gt)
        for s in synthetic_samples(tc.n_pairs, spec)
    ]


def mean_loss(pairs: List[PairData], params, cfg: PipelineConfig, alpha: float) -> float:
    vals = []
    for p in pairs:
        try:
            vals.append(pair_loss_and_grads(p, params, cfg, alpha, with_grads=False)[0])
        except DegenerateInput:
            continue
    return float(np.mean(vals))


def train(
    tc: TrainConfig = TrainConfig(),
    base: Optional[PipelineConfig] = None,
    params: Optional[Dict[str, np.ndarray]] = None,
    progress: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Adam over the pairs, one update per pair, learning rate halved every
    10 epochs.  Initial and final losses are clean passes over all pairs."""
    t0 = time.perf_counter()
    cfg = tc.pipeline(base)
    pairs = prepare_pairs(tc, cfg)
    params = dict(params) if params is not None else init_params(cfg, tc.seed)
    state = AdamState()
    initial = mean_loss(pairs, params, cfg, tc.alpha)
    curve = [(0, initial, tc.lr)]
    order_rng = np.random.default_rng(tc.seed)
    for epoch in range(tc.epochs):
        lr = tc.lr * 0.5 ** (epoch // 10)
        epoch_losses = []
        for i in order_rng.permutation(len(pairs)):
            try:
                total, _, grads = pair_loss_and_grads(pairs[i], params, cfg, tc.alpha, tc.fd_step)
            except DegenerateInput as exc:
                log.warning("epoch %d pair %d skipped: %s", epoch, i, exc)
                continue
            epoch_losses.append(total)
            params = adam_step(params, grads, state, tc.lr, epoch)
        mean = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        curve.append((epoch + 1, mean, lr))
        if progress is not None:
            progress(epoch + 1, mean)
    final = mean_loss(pairs, params, cfg, tc.alpha)
    return TrainResult(params, curve, initial, final, time.perf_counter() - t0)


def write_curve(result: TrainResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "lr"])
        for epoch, loss, lr in result.curve:
            w.writerow([epoch, f"{loss:.6f}", f"{lr:.6g}"])
        w.writerow(["final", f"{result.final_loss:.6f}", ""])


def save_result(result: TrainResult, out_dir) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve, params = out_dir / "loss_curve.csv", out_dir / "params.hdmn"
    write_curve(result, curve)
    save_params(result.params, params)
    return curve, params
