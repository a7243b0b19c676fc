"""FastAPI application wrapping the registration pipeline."""
from __future__ import annotations

from typing import Dict, Optional

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..api import register_clouds
from ..cloud import PointCloud
from ..config import RunConfig, apply_overrides, as_dict
from ..errors import HierMatchError
from ..evaluation import is_success, rre, rte
from ..io import parse_pose_line
from .schemas import Health, MetricsRequest, MetricsResponse, RegisterRequest, RegisterResponse


def _pose(values, where: str):
    return parse_pose_line(" ".join(repr(float(v)) for v in values), where)


def create_app(base: RunConfig = RunConfig(), params: Optional[Dict[str, np.ndarray]] = None) -> FastAPI:
    app = FastAPI(title="hiermatch", version=__version__)

    @app.get("/health", response_model=Health)
    def health() -> Health:
        return Health(status="ok", version=__version__, mode=base.pipeline.mode, has_params=params is not None)

    @app.get("/config")
    def config() -> dict:
        return as_dict(base)

    @app.post("/register", response_model=RegisterResponse)
    def register(req: RegisterRequest) -> dict:
        try:
            cfg = apply_overrides(base, [(k, str(v)) for k, v in req.overrides.items()])
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"bad override: {exc}") from exc
        try:
            src = PointCloud(np.array(req.source, dtype=np.float64).reshape(-1, 3))
            tgt = PointCloud(np.array(req.target, dtype=np.float64).reshape(-1, 3))
            gt = _pose(req.gt_pose, "gt_pose") if req.gt_pose is not None else None
            _, summary = register_clouds(src, tgt, cfg.pipeline, params, gt, cfg.eval)
        except (HierMatchError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"{type(exc).__name__}: {exc}") from exc
        return summary

    @app.post("/metrics", response_model=MetricsResponse)
    def metrics(req: MetricsRequest) -> MetricsResponse:
        try:
            est, gt = _pose(req.estimate, "estimate"), _pose(req.gt, "gt")
        except HierMatchError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        e_t, e_r = rte(est, gt), rre(est, gt)
        return MetricsResponse(rte_m=e_t, rre_deg=e_r, success=is_success(e_t, e_r, base.eval))

    return app
