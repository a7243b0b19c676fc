"""Mask-guided fine registration on pyramid levels 2 and 1, and the full pipeline."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .cloud import PointCloud
from .coarse import CorrespondenceSet, SoftMatch, coarse_register, init_coarse_params, init_matcher_params, soft_match_once
from .config import PipelineConfig
from .errors import StageError
from .geometry import RigidTransform, compose, rotation_angle_deg, weighted_kabsch
from .nn import DenseStack, ParamView, shared_mlp_forward
from .nn.autograd import Tensor
from .pyramid import PyramidLevel, build_pyramid, init_detector_params, preprocess
from .sampling import knn

log = logging.getLogger(__name__)

DIST_CLAMP = 1e-9


def upsample_confidence(shallow_pts, deep_pts, deep_conf, k: int) -> np.ndarray:
    """Inverse-distance weighted average of the k nearest deeper-level confidences."""
    deep_conf = np.asarray(deep_conf, dtype=np.float64).reshape(-1)
    if len(deep_conf) != len(deep_pts):
        raise ValueError("deep confidences must align with deep keypoints")
    dist, idx = knn(np.asarray(deep_pts), np.asarray(shallow_pts), k)
    w = 1.0 / np.maximum(dist, DIST_CLAMP)
    return np.sum(w * deep_conf[idx], axis=1) / np.sum(w, axis=1)


def channel_mask(initial: np.ndarray, view: ParamView, level: int):
    """Map each keypoint's scalar mask to a per-channel multiplier in (0, 1)."""
    stack = DenseStack.from_params(view, f"fine.l{level}.mask", ("relu", "sigmoid"))
    return shared_mlp_forward(stack, Tensor(np.asarray(initial).reshape(-1, 1)))


@dataclass
class RefineResult:
    transform: RigidTransform
    delta: RigidTransform
    confidences: np.ndarray
    correspondences: CorrespondenceSet
    match: SoftMatch = None
    moved: np.ndarray = None


def residual_kernel(moved: np.ndarray, virtual: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Gaussian down-weighting of correspondences with large residuals,
    with width ``cfg.residual_scale`` times the median residual."""
    r = np.linalg.norm(virtual - moved, axis=1)
    rho = max(cfg.residual_scale * float(np.median(r)), 1e-9)
    return np.exp(-0.5 * (r / rho) ** 2)


def fine_temperature(moved: np.ndarray, tgt_pts: np.ndarray, cfg: PipelineConfig) -> float:
    """Spatial temperature that follows the current alignment residual.

    Scales the median nearest-target distance, so exactly aligned inputs get
    hard (one-hot) assignments.
    """
    d, _ = knn(tgt_pts, moved, 1)
    return max(cfg.fine_temperature * float(np.median(d)), 1e-6)


def refine_layer(
    src: PyramidLevel,
    tgt: PyramidLevel,
    T_prev: RigidTransform,
    mask_initial: Optional[np.ndarray],
    cfg: PipelineConfig,
    view: Optional[ParamView] = None,
) -> RefineResult:
    """One single-soft matching pass in Euclidean space, then the weighted
    Kabsch increment composed onto ``T_prev``."""
    level = src.level
    moved = T_prev.transform_points(src.keypoints)
    if not cfg.mask or mask_initial is None:
        mask_initial = np.ones(len(src))
    # deterministic mode applies the mask to confidences, not scores
    mask = channel_mask(mask_initial, view, level) if cfg.mode == "learned" else None
    match = soft_match_once(
        moved, src.descriptors, tgt.keypoints, tgt.descriptors, cfg.k_fine, cfg,
        space="euclidean", with_confidence=True, mask=mask, use_similarity=cfg.feature_consistency,
        distance_scale=fine_temperature(moved, tgt.keypoints, cfg), view=view, prefix=f"fine.l{level}",
        desc_gain=cfg.fine_desc_gain,
    )
    conf = match.confidences.data
    if cfg.mode != "learned":
        conf = conf * residual_kernel(moved, match.points.data, cfg)
        conf = conf * mask_initial
        conf = np.clip(conf, 1e-12, 1.0 - 1e-12)
    delta = weighted_kabsch(moved, match.points.data, conf)
    corr = CorrespondenceSet(moved, match.points.data.copy(), conf.copy(), match.descriptors.data.copy())
    return RefineResult(compose(delta, T_prev), delta, conf, corr, match, moved)


def init_params(cfg: PipelineConfig, seed: int = 0) -> Dict[str, np.ndarray]:
    """Fresh parameters for every learned component (detector included)."""
    rng = np.random.default_rng(seed)
    params = init_detector_params(cfg, rng)
    params.update(init_coarse_params(cfg, rng))
    for level in (2, 1):
        params.update(init_matcher_params(rng, cfg.desc_dims[level - 1], f"fine.l{level}", True, with_mask=True))
    return params


@dataclass
class StageRecord:
    stage: str
    transform: RigidTransform
    ms: float
    rte_m: Optional[float] = None
    rre_deg: Optional[float] = None

    def as_text(self) -> str:
        err = ""
        if self.rte_m is not None:
            err = f" rte_m={self.rte_m:.6f} rre_deg={self.rre_deg:.6f}"
        return f"stage={self.stage}{err} ms={self.ms:.3f}"


@dataclass
class PipelineResult:
    transform: RigidTransform
    stages: List[StageRecord]
    coarse: CorrespondenceSet
    pyramids: Tuple[list, list] = None
    fine: List[RefineResult] = field(default_factory=list)

    def stage(self, name: str) -> StageRecord:
        return next(s for s in self.stages if s.stage == name)


def _errors(T: RigidTransform, gt: Optional[RigidTransform]):
    if gt is None:
        return None, None
    return float(np.linalg.norm(T.t - gt.t)), rotation_angle_deg(T.R.T @ gt.R)


def register_pyramids(
    src_pyr, tgt_pyr, cfg: PipelineConfig, params=None, gt: Optional[RigidTransform] = None, view=None
) -> PipelineResult:
    """Coarse matching on level 3, then refinement on levels 2 and 1."""
    if view is None and params is not None:
        view = ParamView(params)
    stages = []
    t0 = time.perf_counter()
    try:
        coarse = coarse_register(src_pyr[2], tgt_pyr[2], cfg, view)
    except Exception as exc:
        raise StageError("coarse", exc) from exc
    T = coarse.transform
    stages.append(StageRecord("coarse", T, 1e3 * (time.perf_counter() - t0), *_errors(T, gt)))

    conf_pts, conf = src_pyr[2].keypoints, coarse.correspondences.confidences
    fine = []
    for level in (2, 1):
        t0 = time.perf_counter()
        try:
            src_l = src_pyr[level - 1]
            mask0 = upsample_confidence(src_l.keypoints, conf_pts, conf, cfg.k_upsample) if cfg.mask else None
            res = refine_layer(src_l, tgt_pyr[level - 1], T, mask0, cfg, view)
        except Exception as exc:
            raise StageError(f"refine_l{level}", exc) from exc
        T = res.transform
        fine.append(res)
        conf_pts, conf = src_l.keypoints, res.confidences
        stages.append(StageRecord(f"refine_l{level}", T, 1e3 * (time.perf_counter() - t0), *_errors(T, gt)))
    return PipelineResult(T, stages, coarse.correspondences, (src_pyr, tgt_pyr), fine)


def run_pipeline(
    src_raw: PointCloud,
    tgt_raw: PointCloud,
    cfg: PipelineConfig,
    params=None,
    gt: Optional[RigidTransform] = None,
) -> PipelineResult:
    """Preprocess, build both pyramids, register; diagnostics carry per-stage timings."""
    stages = []
    t0 = time.perf_counter()
    try:
        src_pyr = build_pyramid(src_raw, cfg, params)
        tgt_pyr = build_pyramid(tgt_raw, cfg, params)
    except Exception as exc:
        raise StageError("pyramid", exc) from exc
    stages.append(StageRecord("pyramid", RigidTransform.identity(), 1e3 * (time.perf_counter() - t0)))
    result = register_pyramids(src_pyr, tgt_pyr, cfg, params, gt)
    result.stages = stages + result.stages
    return result
