"""Three-level keypoint pyramid: WFPS candidates, cluster aggregation,
descriptors and uncertainties."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .cloud import PointCloud
from .config import PipelineConfig
from .descriptors import DescriptorSupport, handcrafted_descriptor
from .errors import DegenerateInput
from .nn import DenseStack, ParamView, concat, l2_normalize, maxpool, shared_mlp_forward
from .nn.autograd import Tensor, softmax as np_softmax
from .sampling import NeighborIndex, random_subsample, voxel_downsample, wfps


@dataclass
class PyramidLevel:
    keypoints: np.ndarray
    descriptors: np.ndarray
    uncertainties: np.ndarray
    level: int

    def __post_init__(self):
        n = len(self.keypoints)
        if len(self.descriptors) != n or len(self.uncertainties) != n:
            raise DegenerateInput("keypoints, descriptors and uncertainties must align")

    def __len__(self) -> int:
        return len(self.keypoints)


def preprocess(cloud: PointCloud, cfg: PipelineConfig, seed: Optional[int] = None) -> PointCloud:
    """Voxel-grid filter followed by random subsampling to ``cfg.input_points``."""
    vox = voxel_downsample(cloud, cfg.voxel_size)
    return random_subsample(vox, cfg.input_points, cfg.seed if seed is None else seed)


def cluster_weights(dist: np.ndarray, tau=None) -> np.ndarray:
    """Softmax of ``-dist / tau`` per cluster row; ``tau`` defaults to the
    cluster's mean member distance."""
    if tau is None:
        tau = dist.mean(axis=1, keepdims=True)
    tau = np.where(np.asarray(tau) > 0, tau, 1.0)
    return np_softmax(-dist / tau, axis=1)


def detector_dims(cfg: PipelineConfig, level: int):
    """Layer widths of the learned detector for ``level`` (1-based)."""
    c = cfg.desc_dims[level - 1]
    in_dim = 4 + (cfg.desc_dims[level - 2] if level > 1 else 0)
    return (in_dim, c, c, c), (2 * c, 1)


def init_detector_params(cfg: PipelineConfig, rng: np.random.Generator) -> dict:
    params = {}
    for level in (1, 2, 3):
        mlp, score = detector_dims(cfg, level)
        params.update(DenseStack.init_arrays(rng, mlp, f"detector.l{level}.mlp"))
        params.update(DenseStack.init_arrays(rng, score, f"detector.l{level}.score"))
    return params


def _learned_aggregate(view, level, members, centers, member_desc):
    mlp = DenseStack.from_params(view, f"detector.l{level}.mlp", ("relu", "relu", "relu"))
    score = DenseStack.from_params(view, f"detector.l{level}.score", ("none",))
    offset = members - centers[:, None, :]
    dist = np.linalg.norm(offset, axis=-1, keepdims=True)
    parts = [offset, dist] + ([member_desc] if member_desc is not None else [])
    feats = shared_mlp_forward(mlp, np.concatenate(parts, axis=-1))
    pooled = maxpool(feats, axis=1)
    k = members.shape[1]
    glob = pooled.reshape(pooled.shape[0], 1, pooled.shape[1]).broadcast_to(feats.shape)
    logits = shared_mlp_forward(score, concat([feats, glob], axis=-1)).reshape(feats.shape[0], k)
    w = logits.softmax(axis=1).data
    desc = l2_normalize(pooled).data
    return w, desc


def build_level(
    points: np.ndarray,
    uncertainties: Optional[np.ndarray],
    cfg: PipelineConfig,
    level: int,
    support: Optional[DescriptorSupport] = None,
    input_descriptors: Optional[np.ndarray] = None,
    params=None,
    seed: Optional[int] = None,
    start: Optional[int] = None,
    tau=None,
) -> PyramidLevel:
    """Aggregate ``cfg.n_keypoints[level-1]`` virtual keypoints from ``points``.

    ``support`` indexes the preprocessed raw cloud used by the handcrafted
    descriptor (defaults to ``points``).  ``tau`` overrides the per-cluster
    softmax temperature of the deterministic detector.
    """
    points = np.asarray(points, dtype=np.float64)
    n_out = cfg.n_keypoints[level - 1]
    if n_out > len(points):
        raise DegenerateInput(f"level {level} needs {n_out} input points, got {len(points)}")
    seed = cfg.seed * 7919 + level if seed is None else seed
    cand = wfps(points, uncertainties, n_out, seed=seed, start=start)
    index = NeighborIndex(points)
    k = min(cfg.k1, len(points))
    dist, idx = index.query(points[cand], k)
    members = points[idx]

    if cfg.detector == "learned":
        if params is None:
            raise ValueError("learned detector needs parameters")
        view = params if isinstance(params, ParamView) else ParamView(params)
        member_desc = None if input_descriptors is None else input_descriptors[idx]
        w, desc = _learned_aggregate(view, level, members, points[cand], member_desc)
    else:
        w = cluster_weights(dist, tau)
        desc = None

    keypoints = np.einsum("mk,mki->mi", w, members)
    sigma = np.einsum("mk,mk->m", w, np.linalg.norm(members - keypoints[:, None, :], axis=-1))
    if desc is None:
        support = support if support is not None else DescriptorSupport(points)
        desc = handcrafted_descriptor(keypoints, support, cfg.desc_radius[level - 1], cfg.desc_dims[level - 1])
    return PyramidLevel(keypoints, desc, sigma, level)


def build_pyramid(
    raw: PointCloud, cfg: PipelineConfig, params=None, preprocessed: bool = False, start=None
) -> List[PyramidLevel]:
    """Preprocess ``raw`` (unless already done) and build levels 1..3."""
    cloud = raw if preprocessed else preprocess(raw, cfg)
    pts = cloud.points
    support = DescriptorSupport(pts)
    levels = []
    prev_pts, prev_sigma, prev_desc = pts, np.zeros(len(pts)), None
    for level in (1, 2, 3):
        lvl = build_level(
            prev_pts, prev_sigma, cfg, level, support=support, input_descriptors=prev_desc,
            params=params, start=start if level == 1 else None,
        )
        levels.append(lvl)
        prev_pts, prev_sigma, prev_desc = lvl.keypoints, lvl.uncertainties, lvl.descriptors
    return levels
