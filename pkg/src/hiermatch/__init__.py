"""Hierarchical soft-matching point cloud registration."""
from .cloud import PointCloud
from .config import EvalThresholds, PipelineConfig, RunConfig, load_config
from .errors import (
    DegenerateInput,
    DimensionMismatch,
    EmptyCloud,
    EmptyDataset,
    EmptySet,
    HierMatchError,
    MalformedFile,
    StageError,
)
from .fine import PipelineResult, run_pipeline
from .geometry import RigidTransform, apply, compose, invert, weighted_kabsch
from .synthetic import ScenePairSpec, generate_pair

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "EvalThresholds", "PipelineConfig", "RunConfig", "load_config",
    "DegenerateInput", "DimensionMismatch", "EmptyCloud", "EmptyDataset", "EmptySet",
    "HierMatchError", "MalformedFile", "StageError", "PipelineResult", "run_pipeline",
    "RigidTransform", "apply", "compose", "invert", "weighted_kabsch",
    "ScenePairSpec", "generate_pair",
]
