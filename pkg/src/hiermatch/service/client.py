"""Thin client for a running service."""
from __future__ import annotations

from typing import Optional

import httpx

from ..cloud import PointCloud
from ..config import RunConfig
from ..errors import HierMatchError
from ..geometry import RigidTransform


class RemoteError(HierMatchError):
    pass


def remote_register(
    url: str, src: PointCloud, tgt: PointCloud, cfg: RunConfig, gt: Optional[RigidTransform] = None,
    client: Optional[httpx.Client] = None, timeout: float = 300.0,
) -> dict:
    """POST the pair to ``{url}/register`` with the local pipeline and eval
    settings as overrides."""
    overrides = {}
    for section in ("pipeline", "eval"):
        for key, value in vars(getattr(cfg, section)).items():
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            overrides[f"{section}.{key}"] = value
    body = {"source": src.points.tolist(), "target": tgt.points.tolist(), "overrides": overrides}
    if gt is not None:
        body["gt_pose"] = [float(v) for v in gt.as_matrix()[:3].ravel()]
    http = client or httpx.Client(base_url=url, timeout=timeout)
    try:
        resp = http.post("/register", json=body)
    except httpx.HTTPError as exc:
        raise RemoteError(f"service at {url} unreachable: {exc}") from exc
    finally:
        if client is None:
            http.close()
    if resp.status_code != 200:
        raise RemoteError(f"service returned {resp.status_code}: {resp.text}")
    return resp.json()
