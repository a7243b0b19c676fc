"""Double soft matching on the deepest pyramid level and the coarse pose."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import PipelineConfig
from .errors import DegenerateInput, DimensionMismatch
from .geometry import RigidTransform, weighted_kabsch
from .nn import DenseStack, ParamView, concat, l2_normalize, maxpool, shared_mlp_forward
from .nn.autograd import Tensor, as_tensor, softmax as np_softmax
from .pyramid import PyramidLevel
from .sampling import knn


CONF_FLOOR = 1e-12


@dataclass
class CorrespondenceSet:
    source: np.ndarray
    virtual_targets: np.ndarray
    confidences: np.ndarray
    descriptors: np.ndarray
    # stage-2 pool size, kept for inspection
    pool_size: int = 0

    def __len__(self) -> int:
        return len(self.source)


@dataclass
class SoftMatch:
    """Output of one soft matching pass; Tensors so gradients can flow."""

    points: Tensor
    descriptors: Tensor
    weights: Tensor
    neighbors: np.ndarray
    confidences: Optional[Tensor] = None
    features: dict = field(default_factory=dict)


def cosine_similarity(d_center: np.ndarray, d_members: np.ndarray) -> np.ndarray:
    d_center = np.asarray(d_center, dtype=np.float64)
    d_members = np.asarray(d_members, dtype=np.float64)
    nc = np.linalg.norm(d_center, axis=-1)
    nm = np.linalg.norm(d_members, axis=-1)
    if np.any(nc == 0) or np.any(nm == 0):
        raise DegenerateInput("zero-norm descriptor in feature consistency")
    dots = np.einsum("...c,...kc->...k", d_center, d_members)
    return dots / (nc[..., None] * nm)


def feature_consistency(d_center, d_members) -> np.ndarray:
    """Cosine similarity of each member to the centre, divided by the cluster max.

    Clusters whose best raw score is not positive are returned unnormalized,
    since dividing by a non-positive maximum would flip or blow up the scores.
    """
    raw = cosine_similarity(d_center, d_members)
    top = raw.max(axis=-1, keepdims=True)
    return np.where(top > 1e-12, raw / np.maximum(top, 1e-12), raw)


def bilateral_consensus(source_idx: int, target_idx: int, knn_s2t, knn_t2s) -> int:
    """1 when the two items list each other as neighbours, else 0."""
    return int(target_idx in np.atleast_1d(knn_s2t[source_idx]) and source_idx in np.atleast_1d(knn_t2s[target_idx]))


def consensus_matrix(members: np.ndarray, nn_s2t: np.ndarray, nn_t2s: np.ndarray) -> np.ndarray:
    """Vectorized mutual-nearest indicator for every (centre, member) pair."""
    rows = np.arange(members.shape[0])[:, None]
    return ((members == nn_s2t[:, None]) & (nn_t2s[members] == rows)).astype(np.float64)


def matcher_dims(c: int):
    feat = 6 + 2 * c
    return {"mlp": (feat, c, c, c), "score": (2 * c, 1), "conf": (c, max(c // 2, 1), 1)}


def consistency_scores(source: np.ndarray, targets: np.ndarray, sigma: float, iters: int = 50) -> np.ndarray:
    """Leading eigenvector of the pairwise length-consistency matrix, scaled to max 1.

    Pair (i, j) scores ``exp(-(|x_i - x_j| - |y_i - y_j|)^2 / (2 sigma^2))``;
    a rigid motion preserves lengths, so mutually consistent
    correspondences reinforce each other in the power iteration.
    """
    dx = np.linalg.norm(source[:, None, :] - source[None, :, :], axis=-1)
    dy = np.linalg.norm(targets[:, None, :] - targets[None, :, :], axis=-1)
    M = np.exp(-((dx - dy) ** 2) / (2.0 * sigma * sigma))
    np.fill_diagonal(M, 0.0)
    v = np.full(len(source), 1.0 / np.sqrt(len(source)))
    for _ in range(iters):
        nv = M @ v
        norm = np.linalg.norm(nv)
        if norm == 0.0:
            return np.ones(len(source))
        v = nv / norm
    return v / v.max()


def init_matcher_params(rng, c: int, prefix: str, with_confidence: bool, with_mask: bool = False) -> dict:
    dims = matcher_dims(c)
    out = DenseStack.init_arrays(rng, dims["mlp"], f"{prefix}.mlp")
    out.update(DenseStack.init_arrays(rng, dims["score"], f"{prefix}.score"))
    if with_confidence:
        out.update(DenseStack.init_arrays(rng, dims["conf"], f"{prefix}.conf"))
    if with_mask:
        out.update(DenseStack.init_arrays(rng, (1, c, c), f"{prefix}.mask"))
    return out


def init_coarse_params(cfg: PipelineConfig, rng) -> dict:
    c = cfg.desc_dims[2]
    params = init_matcher_params(rng, c, "coarse.s1", with_confidence=False)
    params.update(init_matcher_params(rng, c, "coarse.s2", with_confidence=True))
    return params


def soft_match_once(
    centers: np.ndarray,
    center_desc: np.ndarray,
    pool_pts,
    pool_desc,
    k: int,
    cfg: PipelineConfig,
    *,
    space: str = "descriptor",
    with_confidence: bool = False,
    mask=None,
    use_similarity: bool = True,
    use_consensus: bool = False,
    distance_scale: Optional[float] = None,
    view: Optional[ParamView] = None,
    prefix: str = "coarse.s1",
    query_points: Optional[np.ndarray] = None,
    desc_gain: Optional[float] = None,
) -> SoftMatch:
    """Aggregate each centre's k-neighbourhood in the pool into one virtual point.

    Neighbours are searched among pool descriptors (``space="descriptor"``)
    or pool coordinates (``space="euclidean"``, queried at ``query_points``
    or the centres).  Deterministic mode scores members by
    ``(s + b + desc_gain * cos) / desc_temperature - dist / distance_scale``; learned mode runs
    the shared MLP scorer under ``prefix``.  ``mask`` is a per-centre scalar
    (deterministic) or a per-centre channel vector Tensor (learned).
    """
    if distance_scale is None:
        distance_scale = cfg.coarse_distance_scale
    if desc_gain is None:
        desc_gain = cfg.desc_gain
    pool_pts = as_tensor(pool_pts)
    pool_desc = as_tensor(pool_desc)
    centers = np.asarray(centers, dtype=np.float64)
    center_desc = np.asarray(center_desc, dtype=np.float64)
    if center_desc.shape[-1] != pool_desc.shape[-1]:
        raise DimensionMismatch(
            f"centre descriptor dim {center_desc.shape[-1]} != pool descriptor dim {pool_desc.shape[-1]}"
        )
    if k > pool_pts.shape[0]:
        raise DegenerateInput(f"k={k} exceeds pool size {pool_pts.shape[0]}")
    if space == "descriptor":
        _, nbr = knn(pool_desc.data, center_desc, k)
    elif space == "euclidean":
        q = centers if query_points is None else query_points
        _, nbr = knn(pool_pts.data, q, k)
    else:
        raise ValueError(f"unknown search space {space!r}")

    m = centers.shape[0]
    member_pts = pool_pts[nbr]
    member_desc = pool_desc[nbr]
    ref = centers if query_points is None else np.asarray(query_points)
    offset = member_pts.data - ref[:, None, :]
    dist = np.linalg.norm(offset, axis=-1)
    sim = feature_consistency(center_desc, member_desc.data) if use_similarity else np.zeros((m, k))
    if use_consensus:
        _, s2t = knn(pool_desc.data, center_desc, 1)
        _, t2s = knn(center_desc, pool_desc.data, 1)
        cons = consensus_matrix(nbr, s2t[:, 0], t2s[:, 0])
    else:
        cons = np.zeros((m, k))
    feats = {"similarity": sim, "consensus": cons, "distance": dist}

    if cfg.mode == "learned":
        if view is None:
            raise ValueError("learned mode needs matching parameters")
        weights, conf = _learned_scores(
            view, prefix, sim, cons, offset, dist, center_desc, member_desc, distance_scale, mask, with_confidence
        )
    else:
        raw_cos = cosine_similarity(center_desc, member_desc.data)
        score = (sim + cons + desc_gain * raw_cos) / cfg.desc_temperature - dist / distance_scale
        if mask is not None:
            score = score * np.asarray(mask, dtype=np.float64).reshape(m, 1)
        w = np_softmax(score, axis=1)
        weights = Tensor(w)
        conf = Tensor(w.max(axis=1)) if with_confidence else None

    w3 = weights.reshape(m, k, 1)
    points = (member_pts * w3).sum(axis=1)
    desc = l2_normalize((member_desc * w3).sum(axis=1))
    return SoftMatch(points, desc, weights, nbr, conf, feats)


def _learned_scores(view, prefix, sim, cons, offset, dist, center_desc, member_desc, scale, mask, with_confidence):
    m, k, _ = offset.shape
    c = center_desc.shape[-1]
    fixed = np.concatenate(
        [sim[..., None], cons[..., None], offset / scale, dist[..., None] / scale,
         np.broadcast_to(center_desc[:, None, :], (m, k, c))],
        axis=-1,
    )
    x = concat([Tensor(fixed), member_desc], axis=-1)
    mlp = DenseStack.from_params(view, f"{prefix}.mlp", ("relu", "relu", "relu"))
    fmap = shared_mlp_forward(mlp, x)
    if mask is not None:
        fmap = fmap * as_tensor(mask).reshape(m, 1, fmap.shape[-1])
    pooled = maxpool(fmap, axis=1)
    glob = pooled.reshape(m, 1, pooled.shape[-1]).broadcast_to(fmap.shape)
    score_head = DenseStack.from_params(view, f"{prefix}.score", ("none",))
    logits = shared_mlp_forward(score_head, concat([fmap, glob], axis=-1)).reshape(m, k)
    weights = logits.softmax(axis=1)
    conf = None
    if with_confidence:
        head = DenseStack.from_params(view, f"{prefix}.conf", ("relu", "sigmoid"))
        conf = shared_mlp_forward(head, pooled).reshape(m)
    return weights, conf


@dataclass
class CoarseResult:
    correspondences: CorrespondenceSet
    transform: RigidTransform
    # Tensors of the stage that fed the solver (for training)
    match: SoftMatch = None


def double_soft_match(
    src: PyramidLevel, tgt: PyramidLevel, cfg: PipelineConfig, view: Optional[ParamView] = None
) -> SoftMatch:
    """Source keypoints against the target level through one or two soft passes.

    Stage 1 aggregates each source keypoint's k2 descriptor neighbours in
    the target into an updated target point.  Stage 2 matches the source
    against the updated points, concatenated with the original target when
    sparse-to-denser is on, with bilateral consensus and confidences.

    In deterministic mode stage 2 takes ``stage2_k`` descriptor neighbours
    and measures member distances from the source keypoints moved by the
    consistency-weighted pose of stage 1, on the ``stage2_distance_scale``
    length scale.  Without this the second pass only repeats the first.
    """
    if len(src) != len(tgt):
        raise DegenerateInput(f"level sizes differ: {len(src)} vs {len(tgt)}")
    fs = cfg.feature_consistency
    if not cfg.double_soft:
        return soft_match_once(
            src.keypoints, src.descriptors, tgt.keypoints, tgt.descriptors, cfg.k1, cfg,
            with_confidence=True, use_similarity=fs, view=view, prefix="coarse.s2",
        )
    learned = cfg.mode == "learned"
    stage1 = soft_match_once(
        src.keypoints, src.descriptors, tgt.keypoints, tgt.descriptors, cfg.k2, cfg,
        use_similarity=fs, view=view, prefix="coarse.s1", with_confidence=not learned,
    )
    if cfg.sparse_to_denser:
        pool_pts = concat([stage1.points, Tensor(tgt.keypoints)], axis=0)
        pool_desc = concat([stage1.descriptors, Tensor(tgt.descriptors)], axis=0)
    else:
        pool_pts, pool_desc = stage1.points, stage1.descriptors
    k, query, scale = cfg.k1, None, None
    if not learned:
        w1 = stage1.confidences.data * consistency_scores(
            src.keypoints, stage1.points.data, cfg.consistency_sigma) ** cfg.consistency_power
        T1 = weighted_kabsch(src.keypoints, stage1.points.data, np.clip(w1, CONF_FLOOR, None))
        k, query, scale = cfg.stage2_k, T1.transform_points(src.keypoints), cfg.stage2_distance_scale
    stage2 = soft_match_once(
        src.keypoints, src.descriptors, pool_pts, pool_desc, k, cfg,
        with_confidence=True, use_similarity=fs, use_consensus=True, view=view, prefix="coarse.s2",
        query_points=query, distance_scale=scale,
    )
    stage2.features["pool_size"] = pool_pts.shape[0]
    return stage2


def _deterministic_confidence(src_pts: np.ndarray, match: SoftMatch, cfg: PipelineConfig) -> SoftMatch:
    if cfg.mode != "learned":
        cons = consistency_scores(src_pts, match.points.data, cfg.consistency_sigma)
        conf = match.confidences.data * cons**cfg.consistency_power
        # keep the open-interval contract of sigmoid confidences
        match.confidences = Tensor(np.clip(conf, CONF_FLOOR, 1.0 - CONF_FLOOR))
    return match


def to_correspondences(src_pts: np.ndarray, match: SoftMatch) -> CorrespondenceSet:
    return CorrespondenceSet(
        source=np.asarray(src_pts),
        virtual_targets=match.points.data.copy(),
        confidences=match.confidences.data.copy(),
        descriptors=match.descriptors.data.copy(),
        pool_size=int(match.features.get("pool_size", 0)),
    )


def coarse_pose(corr: CorrespondenceSet) -> RigidTransform:
    return weighted_kabsch(corr.source, corr.virtual_targets, corr.confidences)


def coarse_register(src: PyramidLevel, tgt: PyramidLevel, cfg: PipelineConfig, view=None) -> CoarseResult:
    match = _deterministic_confidence(src.keypoints, double_soft_match(src, tgt, cfg, view), cfg)
    corr = to_correspondences(src.keypoints, match)
    return CoarseResult(corr, coarse_pose(corr), match)
