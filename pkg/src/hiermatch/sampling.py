"""Preprocessing, farthest point samplers and exact k-nearest-neighbour search."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .errors import DegenerateInput, EmptyCloud

SIGMA_EPS = 1e-6

# brute force below this many query*item pairs or above this dimension
_BRUTE_PAIRS = 200_000
_KDTREE_MAX_DIM = 8


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One centroid per occupied voxel, ordered by ascending voxel coordinate."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("cannot voxelize an empty cloud")
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    keys -= keys.min(axis=0)
    span = keys.max(axis=0) + 1
    # row-major linear code preserves lexicographic voxel order
    code = (keys[:, 0] * span[1] + keys[:, 1]) * span[2] + keys[:, 2]
    uniq, inverse = np.unique(code, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    out = np.empty((len(uniq), 3))
    for d in range(3):
        out[:, d] = np.bincount(inverse, weights=cloud.points[:, d], minlength=len(uniq)) / counts
    inten = None
    if cloud.intensity is not None:
        inten = np.bincount(inverse, weights=cloud.intensity, minlength=len(uniq)) / counts
    return PointCloud(out, inten)


def random_subsample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= len(cloud):
        return cloud
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(cloud), size=n, replace=False))
    return cloud.subset(idx)


def wfps(points: np.ndarray, uncertainties, m: int, seed: int = 0, start=None) -> np.ndarray:
    """Weighted farthest point sampling.

    The first index is drawn uniformly from ``seed`` (or pinned by ``start``);
    afterwards the point maximizing ``d_min / (sigma + SIGMA_EPS)`` is taken,
    lowest index on ties.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if m > n:
        raise DegenerateInput(f"cannot sample {m} points from {n}")
    if m <= 0:
        return np.zeros(0, dtype=np.int64)
    if uncertainties is None:
        weight = np.ones(n)
    else:
        sigma = np.asarray(uncertainties, dtype=np.float64).reshape(-1)
        if sigma.shape[0] != n:
            raise DegenerateInput("uncertainties must align with points")
        with np.errstate(divide="ignore"):
            weight = 1.0 / (sigma + SIGMA_EPS)
        weight[~np.isfinite(sigma)] = 0.0
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    x, y, z = (np.ascontiguousarray(pts[:, i]) for i in range(3))
    # argmax of w * d equals argmax of w^2 * d^2 for non-negative terms
    w2 = weight * weight
    d_min = (x - x[start]) ** 2 + (y - y[start]) ** 2 + (z - z[start]) ** 2
    # taken points carry d = -1 and a unit weight, so their score is -1
    d_min[start] = -1.0
    w2[start] = 1.0
    score = np.empty(n)
    for i in range(1, m):
        np.multiply(w2, d_min, out=score)
        nxt = int(np.argmax(score))
        selected[i] = nxt
        d_new = (x - x[nxt]) ** 2 + (y - y[nxt]) ** 2 + (z - z[nxt]) ** 2
        np.minimum(d_min, d_new, out=d_min)
        d_min[nxt] = -1.0
        w2[nxt] = 1.0
    return selected


def fps(points: np.ndarray, m: int, seed: int = 0, start=None) -> np.ndarray:
    return wfps(points, None, m, seed=seed, start=start)


def _sort_rows(dist: np.ndarray, idx: np.ndarray):
    order = np.lexsort((idx, dist), axis=-1)
    return np.take_along_axis(dist, order, -1), np.take_along_axis(idx, order, -1)


def _brute(items: np.ndarray, queries: np.ndarray, k: int):
    d2 = (
        np.sum(queries**2, axis=1)[:, None]
        + np.sum(items**2, axis=1)[None, :]
        - 2.0 * queries @ items.T
    )
    # exact differences for the tie rule; the expansion above is only a filter
    n = items.shape[0]
    kk = min(n, k + 8)
    if kk < n:
        cand = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
    else:
        cand = np.broadcast_to(np.arange(n), (queries.shape[0], n)).copy()
    diff = items[cand] - queries[:, None, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    dist, cand = _sort_rows(dist, cand)
    if kk < n:
        # a candidate set that might have cut a tie or a near-tie: redo exactly
        bound = np.sqrt(np.maximum(np.take_along_axis(d2, cand[:, -1:], 1)[:, 0], 0.0))
        suspect = np.flatnonzero(dist[:, k - 1] >= bound - 1e-9 * (1 + bound))
        for r in suspect:
            diff_r = items - queries[r]
            full = np.sqrt(np.sum(diff_r * diff_r, axis=1))
            order = np.lexsort((np.arange(n), full))[:kk]
            dist[r], cand[r] = full[order], order
    return dist[:, :k], cand[:, :k]


class NeighborIndex:
    """Exact kNN over a fixed item set (coordinates or descriptors).

    Results are sorted by ascending Euclidean distance, ties broken by
    ascending item index.
    """

    def __init__(self, items: np.ndarray):
        self.items = np.ascontiguousarray(items, dtype=np.float64)
        if self.items.ndim != 2:
            raise DegenerateInput("items must be a 2-D array")
        self._tree = None
        if self.items.shape[1] <= _KDTREE_MAX_DIM and len(self.items) > 64:
            self._tree = cKDTree(self.items)

    def __len__(self) -> int:
        return self.items.shape[0]

    def query(self, queries: np.ndarray, k: int):
        """Return ``(distances, indices)``, each of shape ``(n_queries, k)``."""
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, self.items.shape[1])
        n = len(self)
        if k > n:
            raise DegenerateInput(f"k={k} exceeds item count {n}")
        if k <= 0:
            return np.zeros((len(q), 0)), np.zeros((len(q), 0), dtype=np.int64)
        if self._tree is None or q.shape[0] * n <= _BRUTE_PAIRS:
            return _brute(self.items, q, k)
        kk = min(n, k + 1)
        dist, idx = self._tree.query(q, k=kk)
        dist = np.asarray(dist).reshape(len(q), kk)
        idx = np.asarray(idx, dtype=np.int64).reshape(len(q), kk)
        # recompute distances exactly so equal distances compare equal
        diff = self.items[idx] - q[:, None, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        dist, idx = _sort_rows(dist, idx)
        if kk > k:
            # a tie straddling position k may hide lower-index equals beyond kk
            tied = np.flatnonzero(dist[:, k - 1] == dist[:, k])
            for r in tied:
                diff_r = self.items - q[r]
                full = np.sqrt(np.sum(diff_r * diff_r, axis=1))
                order = np.lexsort((np.arange(n), full))[:kk]
                dist[r], idx[r] = full[order], order
        return dist[:, :k], idx[:, :k]


def knn(items: np.ndarray, queries: np.ndarray, k: int):
    return NeighborIndex(items).query(queries, k)
