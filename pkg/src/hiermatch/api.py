"""Registration entry point shared by the CLI and the HTTP service."""
from __future__ import annotations

import logging
from typing import Dict, Optional

import numpy as np

from .cloud import PointCloud
from .config import EvalThresholds, PipelineConfig
from .evaluation import is_success, rre, rte
from .fine import PipelineResult, init_params, run_pipeline
from .geometry import RigidTransform
from .io import format_pose_line

log = logging.getLogger(__name__)


def resolve_params(cfg: PipelineConfig, params: Optional[Dict[str, np.ndarray]]):
    """Learned mode without a parameter file falls back to a seeded initialization."""
    if cfg.mode == "learned" and params is None:
        log.warning("learned mode without a parameter file; using untrained initial parameters")
        return init_params(cfg, cfg.seed)
    return params


def summarize(
    result: PipelineResult,
    cfg: PipelineConfig,
    gt: Optional[RigidTransform] = None,
    thresholds: EvalThresholds = EvalThresholds(),
) -> dict:
    """JSON-ready summary of one registration."""
    T = result.transform
    out = {
        "mode": cfg.mode,
        "rotation": T.R.tolist(),
        "translation": T.t.tolist(),
        "pose": format_pose_line(T),
        "rte_m": None,
        "rre_deg": None,
        "success": None,
        "n_correspondences": len(result.coarse),
        "stages": [
            {"stage": s.stage, "ms": s.ms, "rte_m": s.rte_m, "rre_deg": s.rre_deg} for s in result.stages
        ],
    }
    if gt is not None:
        e_t, e_r = rte(T, gt), rre(T, gt)
        out.update(rte_m=e_t, rre_deg=e_r, success=is_success(e_t, e_r, thresholds))
    return out


def register_clouds(
    src: PointCloud,
    tgt: PointCloud,
    cfg: PipelineConfig,
    params=None,
    gt: Optional[RigidTransform] = None,
    thresholds: EvalThresholds = EvalThresholds(),
):
    """Run the pipeline and return ``(result, summary)``."""
    result = run_pipeline(src, tgt, cfg, resolve_params(cfg, params), gt)
    return result, summarize(result, cfg, gt, thresholds)
