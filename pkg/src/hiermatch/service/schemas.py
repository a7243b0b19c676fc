"""Request and response models of the HTTP service."""
from __future__ import annotations

from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field, field_validator

Scalar = Union[bool, int, float, str]


def _check_points(v: List[List[float]]) -> List[List[float]]:
    for i, p in enumerate(v):
        if len(p) != 3:
            raise ValueError(f"point {i} has {len(p)} coordinates, expected 3")
    return v


def _check_pose(v: Optional[List[float]]) -> Optional[List[float]]:
    if v is not None and len(v) != 12:
        raise ValueError(f"pose needs 12 values (row-major 3x4), got {len(v)}")
    return v


class RegisterRequest(BaseModel):
    source: List[List[float]]
    target: List[List[float]]
    # dotted config keys, for example {"pipeline.mask": false}
    overrides: Dict[str, Scalar] = Field(default_factory=dict)
    gt_pose: Optional[List[float]] = None

    _points = field_validator("source", "target")(_check_points)
    _pose = field_validator("gt_pose")(_check_pose)


class StageOut(BaseModel):
    stage: str
    ms: float
    rte_m: Optional[float] = None
    rre_deg: Optional[float] = None


class RegisterResponse(BaseModel):
    mode: str
    rotation: List[List[float]]
    translation: List[float]
    pose: str
    rte_m: Optional[float] = None
    rre_deg: Optional[float] = None
    success: Optional[bool] = None
    n_correspondences: int
    stages: List[StageOut]


class MetricsRequest(BaseModel):
    estimate: List[float]
    gt: List[float]

    _poses = field_validator("estimate", "gt")(_check_pose)


class MetricsResponse(BaseModel):
    rte_m: float
    rre_deg: float
    success: bool


class Health(BaseModel):
    status: str
    version: str
    mode: str
    has_params: bool
