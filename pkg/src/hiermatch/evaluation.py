"""Registration metrics, benchmark aggregation, recall curves and ablations."""
from __future__ import annotations

import csv
import io as _io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .coarse import CorrespondenceSet
from .config import EvalThresholds, PipelineConfig
from .errors import EmptyDataset
from .fine import register_pyramids
from .geometry import RigidTransform, rotation_angle_deg, weighted_kabsch
from .pyramid import build_pyramid


def rte(est: RigidTransform, gt: RigidTransform) -> float:
    """Relative translation error in metres."""
    return float(np.linalg.norm(est.t - gt.t))


def rre(est: RigidTransform, gt: RigidTransform) -> float:
    """Relative rotation error in degrees, the geodesic angle of R_est^T R_gt."""
    return rotation_angle_deg(est.R.T @ gt.R)


def classify_inliers(corr: CorrespondenceSet, gt: RigidTransform, eps_d: float = 1.0) -> np.ndarray:
    """Flag correspondences whose virtual target lies strictly within ``eps_d``
    of the ground-truth image of their source point."""
    resid = np.linalg.norm(corr.virtual_targets - gt.transform_points(corr.source), axis=1)
    return resid < eps_d


def is_success(rte_m: float, rre_deg: float, th: EvalThresholds) -> bool:
    return bool(rte_m < th.eps_trans and rre_deg < th.eps_rot)


@dataclass
class PairOutcome:
    pair_id: int
    rte_m: float
    rre_deg: float
    success: bool
    ms: float
    transform: Optional[RigidTransform] = None
    stage_rte: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None
    inlier_ratio: Optional[float] = None


@dataclass
class BenchmarkReport:
    pairs: List[PairOutcome]
    thresholds: EvalThresholds = field(default_factory=EvalThresholds)

    @property
    def recall(self) -> float:
        return sum(p.success for p in self.pairs) / len(self.pairs)

    def _succ(self, attr: str) -> np.ndarray:
        return np.array([getattr(p, attr) for p in self.pairs if p.success], dtype=np.float64)

    def _stat(self, attr: str, fn) -> float:
        vals = self._succ(attr)
        return float(fn(vals)) if len(vals) else float("nan")

    @property
    def rte_mean(self) -> float:
        return self._stat("rte_m", np.mean)

    @property
    def rte_std(self) -> float:
        return self._stat("rte_m", np.std)

    @property
    def rre_mean(self) -> float:
        return self._stat("rre_deg", np.mean)

    @property
    def rre_std(self) -> float:
        return self._stat("rre_deg", np.std)

    @property
    def ms_mean(self) -> float:
        return float(np.mean([p.ms for p in self.pairs]))

    def median(self, attr: str) -> float:
        """Median over all pairs, failures included as +inf."""
        vals = [getattr(p, attr) for p in self.pairs]
        return float(np.median([v if np.isfinite(v) else np.inf for v in vals]))

    def stage_mean(self, stage: str) -> float:
        """Mean RTE after ``stage`` over all pairs that reached it."""
        vals = [p.stage_rte[stage] for p in self.pairs if stage in p.stage_rte]
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> dict:
        return {
            "pairs": len(self.pairs),
            "recall": self.recall,
            "rte_mean": self.rte_mean,
            "rte_std": self.rte_std,
            "rre_mean": self.rre_mean,
            "rre_std": self.rre_std,
            "ms_mean": self.ms_mean,
        }


def _num(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.6f}"


def report_csv(report: BenchmarkReport) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair_id", "rte_m", "rre_deg", "success", "ms"])
    for p in report.pairs:
        w.writerow([p.pair_id, _num(p.rte_m), _num(p.rre_deg), int(p.success), f"{p.ms:.3f}"])
    return buf.getvalue()


def recall_curve(report: BenchmarkReport, which: str, thresholds: Optional[Sequence[float]] = None):
    """Recall while sweeping one threshold with the other held at its default.

    ``which`` is ``"rte"`` or ``"rre"``.  Raises if the curve is not
    non-decreasing, which would indicate a bookkeeping bug.
    """
    th = report.thresholds
    if which == "rte":
        grid = np.linspace(th.eps_trans / 20, 2 * th.eps_trans, 40) if thresholds is None else thresholds
        hits = lambda p, x: p.rte_m < x and p.rre_deg < th.eps_rot  # noqa: E731
    elif which == "rre":
        grid = np.linspace(th.eps_rot / 20, 2 * th.eps_rot, 40) if thresholds is None else thresholds
        hits = lambda p, x: p.rre_deg < x and p.rte_m < th.eps_trans  # noqa: E731
    else:
        raise ValueError(f"unknown curve {which!r}")
    grid = np.sort(np.asarray(grid, dtype=np.float64))
    rec = np.array([sum(hits(p, x) for p in report.pairs) / len(report.pairs) for x in grid])
    if np.any(np.diff(rec) < 0):
        raise AssertionError("recall curve is not monotone")
    return grid, rec


def curve_csv(grid, rec) -> str:
    lines = ["threshold,recall"] + [f"{x:.6f},{r:.6f}" for x, r in zip(grid, rec)]
    return "\n".join(lines) + "\n"


def correspondence_csv(corr: CorrespondenceSet, gt: Optional[RigidTransform], eps_d: float = 1.0) -> str:
    flags = classify_inliers(corr, gt, eps_d) if gt is not None else None
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source_x", "source_y", "source_z", "target_x", "target_y", "target_z", "confidence", "inlier_flag"])
    for i in range(len(corr)):
        flag = "" if flags is None else int(flags[i])
        w.writerow([*(f"{v:.6f}" for v in corr.source[i]), *(f"{v:.6f}" for v in corr.virtual_targets[i]),
                    f"{corr.confidences[i]:.6g}", flag])
    return buf.getvalue()


# per-pair registration

PyramidCache = Dict[int, Tuple[list, list]]


def evaluate_pair(
    sample,
    cfg: PipelineConfig,
    thresholds: EvalThresholds,
    params=None,
    cache: Optional[PyramidCache] = None,
    timing: bool = True,
) -> PairOutcome:
    """Register one pair; any failure is recorded rather than raised."""
    t0 = time.perf_counter()
    try:
        if cache is not None and sample.pair_id in cache:
            src_pyr, tgt_pyr = cache[sample.pair_id]
        else:
            src_pyr = build_pyramid(sample.src, cfg, params)
            tgt_pyr = build_pyramid(sample.tgt, cfg, params)
            if cache is not None:
                cache[sample.pair_id] = (src_pyr, tgt_pyr)
        result = register_pyramids(src_pyr, tgt_pyr, cfg, params, sample.gt)
    except Exception as exc:  # recorded as an unsuccessful pair
        ms = 1e3 * (time.perf_counter() - t0) if timing else 0.0
        return PairOutcome(sample.pair_id, float("inf"), float("inf"), False, ms, error=f"{type(exc).__name__}: {exc}")
    ms = 1e3 * (time.perf_counter() - t0) if timing else 0.0
    T = result.transform
    e_t, e_r = rte(T, sample.gt), rre(T, sample.gt)
    stage_rte = {s.stage: s.rte_m for s in result.stages if s.rte_m is not None}
    inl = classify_inliers(result.coarse, sample.gt, thresholds.eps_d)
    return PairOutcome(
        sample.pair_id, e_t, e_r, is_success(e_t, e_r, thresholds), ms, T, stage_rte,
        inlier_ratio=float(inl.mean()) if len(inl) else 0.0,
    )


def benchmark(
    pairs: Iterable,
    cfg: PipelineConfig,
    thresholds: EvalThresholds = EvalThresholds(),
    params=None,
    cache: Optional[PyramidCache] = None,
    timing: bool = True,
    progress: Optional[Callable[[PairOutcome], None]] = None,
) -> BenchmarkReport:
    """Run the pipeline over ``pairs`` (objects with pair_id, src, tgt, gt).

    ``cache`` keeps pyramids keyed by pair id, so repeated runs with
    matching-only config changes skip detection.
    """
    outcomes = []
    for sample in pairs:
        if sample.gt is None:
            out = PairOutcome(sample.pair_id, float("inf"), float("inf"), False, 0.0, error="missing ground truth")
        else:
            out = evaluate_pair(sample, cfg, thresholds, params, cache, timing)
        outcomes.append(out)
        if progress is not None:
            progress(out)
    if not outcomes:
        raise EmptyDataset("dataset has no pairs")
    report = BenchmarkReport(outcomes, thresholds)
    recall_curve(report, "rte")
    recall_curve(report, "rre")
    return report


def report_from_transforms(
    estimates: Sequence[RigidTransform], gts: Sequence[RigidTransform], thresholds: EvalThresholds = EvalThresholds()
) -> BenchmarkReport:
    """Recompute a report from stored estimates (no timing information)."""
    if len(estimates) != len(gts):
        raise ValueError(f"{len(estimates)} estimates for {len(gts)} ground-truth poses")
    if not gts:
        raise EmptyDataset("no poses to evaluate")
    outcomes = []
    for i, (T, gt) in enumerate(zip(estimates, gts)):
        e_t, e_r = rte(T, gt), rre(T, gt)
        outcomes.append(PairOutcome(i, e_t, e_r, is_success(e_t, e_r, thresholds), 0.0, T))
    return BenchmarkReport(outcomes, thresholds)


def write_report(report: BenchmarkReport, directory, prefix: str = "") -> List[Path]:
    """Per-pair CSV plus the two recall curves."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {
        f"{prefix}pairs.csv": report_csv(report),
        f"{prefix}recall_rte.csv": curve_csv(*recall_curve(report, "rte")),
        f"{prefix}recall_rre.csv": curve_csv(*recall_curve(report, "rre")),
    }
    out = []
    for name, text in files.items():
        path = directory / name
        path.write_text(text, encoding="utf-8")
        out.append(path)
    return out


# ablations

ABLATIONS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "w/o STD": {"sparse_to_denser": False},
    "w/o f_s": {"feature_consistency": False},
    "w/o{DM,STD,f_s}": {"double_soft": False, "sparse_to_denser": False, "feature_consistency": False},
    "w/o mask": {"mask": False},
}


def ablation_configs(base: PipelineConfig) -> Dict[str, PipelineConfig]:
    return {name: base.with_flags(**flags) for name, flags in ABLATIONS.items()}


def ablation_suite(
    pairs: Sequence,
    base_cfg: PipelineConfig,
    thresholds: EvalThresholds = EvalThresholds(),
    params=None,
    timing: bool = True,
    variants: Optional[Sequence[str]] = None,
) -> Dict[str, BenchmarkReport]:
    """Benchmark the full configuration and each ablation variant.

    The flags only affect matching, so pyramids are built once and shared.
    """
    pairs = list(pairs)
    cache: PyramidCache = {}
    cfgs = ablation_configs(base_cfg)
    names = list(cfgs) if variants is None else list(variants)
    return {name: benchmark(pairs, cfgs[name], thresholds, params, cache, timing) for name in names}


def ablation_csv(reports: Dict[str, BenchmarkReport]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "rte_mean", "rte_std", "rre_mean", "rre_std", "recall", "ms_mean"])
    for name, r in reports.items():
        w.writerow([name, _num(r.rte_mean), _num(r.rte_std), _num(r.rre_mean), _num(r.rre_std),
                    f"{r.recall:.6f}", f"{r.ms_mean:.3f}"])
    return buf.getvalue()


# baseline

def icp(
    source: PointCloud,
    target: PointCloud,
    init: RigidTransform = RigidTransform.identity(),
    max_iter: int = 50,
    max_dist: float = 2.0,
    tol: float = 1e-6,
) -> RigidTransform:
    """Point-to-point ICP with a correspondence distance cut-off."""
    tree = cKDTree(target.points)
    T = init
    for _ in range(max_iter):
        moved = T.transform_points(source.points)
        d, idx = tree.query(moved)
        keep = d < max_dist
        if keep.sum() < 3:
            break
        delta = weighted_kabsch(moved[keep], target.points[idx[keep]])
        T = delta @ T
        if np.linalg.norm(delta.t) < tol and np.abs(delta.R - np.eye(3)).max() < tol:
            break
    return T


def icp_benchmark(pairs: Iterable, cfg: PipelineConfig, thresholds: EvalThresholds = EvalThresholds(),
                  timing: bool = True) -> BenchmarkReport:
    """ICP from identity on the preprocessed clouds."""
    from .pyramid import preprocess

    outcomes = []
    for s in pairs:
        t0 = time.perf_counter()
        try:
            T = icp(preprocess(s.src, cfg), preprocess(s.tgt, cfg))
        except Exception as exc:
            outcomes.append(PairOutcome(s.pair_id, float("inf"), float("inf"), False, 0.0, error=str(exc)))
            continue
        ms = 1e3 * (time.perf_counter() - t0) if timing else 0.0
        e_t, e_r = rte(T, s.gt), rre(T, s.gt)
        outcomes.append(PairOutcome(s.pair_id, e_t, e_r, is_success(e_t, e_r, thresholds), ms, T))
    if not outcomes:
        raise EmptyDataset("dataset has no pairs")
    return BenchmarkReport(outcomes, thresholds)
