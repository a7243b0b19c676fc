"""Pipeline, evaluation and run configuration plus the flat key/value config format.

Config files hold one ``dotted.key = value`` pair per line; ``#`` starts a
comment.  Tuple-valued keys take comma-separated values::

    pipeline.voxel_size = 0.3
    pipeline.n_keypoints = 1024, 512, 256
    pipeline.mask = false
    eval.eps_rot = 5.0
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from .errors import MalformedFile

MODES = ("deterministic", "learned")


@dataclass(frozen=True)
class PipelineConfig:
    voxel_size: float = 0.3
    input_points: int = 16384
    n_keypoints: Tuple[int, int, int] = (1024, 512, 256)
    desc_dims: Tuple[int, int, int] = (64, 128, 256)
    k1: int = 8
    k2: int = 8
    k_fine: int = 8
    k_upsample: int = 8
    alpha: float = 1.8
    double_soft: bool = True
    sparse_to_denser: bool = True
    feature_consistency: bool = True
    mask: bool = True
    mode: str = "deterministic"
    # the keypoint detector is frozen during training; it runs in this mode
    detector: str = "deterministic"
    seed: int = 0
    # deterministic-mode scoring
    desc_radius: Tuple[float, float, float] = (2.0, 4.0, 8.0)
    desc_temperature: float = 0.05
    desc_gain: float = 8.0
    fine_desc_gain: float = 0.0
    coarse_distance_scale: float = 10.0
    # stage 2 re-ranks around the pose implied by stage 1
    stage2_k: int = 16
    stage2_distance_scale: float = 0.25
    consistency_sigma: float = 0.5
    consistency_power: float = 8.0
    fine_temperature: float = 1.0
    residual_scale: float = 1.5

    def __post_init__(self):
        for name, kind in (("n_keypoints", int), ("desc_dims", int), ("desc_radius", float)):
            object.__setattr__(self, name, tuple(kind(v) for v in getattr(self, name)))
            if len(getattr(self, name)) != 3:
                raise ValueError(f"{name} needs one entry per pyramid level")
        counts = (self.input_points, self.k1, self.k2, self.k_fine, self.k_upsample, self.stage2_k)
        if any(c <= 0 for c in counts + self.n_keypoints + self.desc_dims + self.desc_radius):
            raise ValueError("all counts must be positive")
        if self.k1 * self.k2 > self.n_keypoints[2]:
            raise ValueError("k1 * k2 must not exceed the level-3 keypoint count")
        if self.mode not in MODES or self.detector not in MODES:
            raise ValueError(f"mode and detector must be one of {MODES}")
        if self.voxel_size <= 0 or self.alpha <= 0:
            raise ValueError("voxel_size and alpha must be positive")
        if self.desc_gain < 0 or self.fine_desc_gain < 0:
            raise ValueError("descriptor gains must be non-negative")
        if self.stage2_k > self.n_keypoints[2]:
            raise ValueError("stage2_k must not exceed the level-3 keypoint count")
        if min(self.desc_temperature, self.fine_temperature, self.stage2_distance_scale) <= 0:
            raise ValueError("temperatures must be positive")

    def with_flags(self, **flags) -> "PipelineConfig":
        return replace(self, **flags)


@dataclass(frozen=True)
class EvalThresholds:
    eps_trans: float = 2.0
    eps_rot: float = 5.0
    eps_d: float = 1.0

    def __post_init__(self):
        if min(self.eps_trans, self.eps_rot, self.eps_d) <= 0:
            raise ValueError("thresholds must be positive")


@dataclass(frozen=True)
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    eval: EvalThresholds = field(default_factory=EvalThresholds)
    dataset: Optional[str] = None
    output_dir: str = "out"
    params_path: Optional[str] = None

    def check_paths(self) -> None:
        for label, p in (("dataset", self.dataset), ("params_path", self.params_path)):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"{label} path does not exist: {p}")


def _parse_value(raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, tuple):
        return tuple(type(current[0])(v) for v in raw.split(","))
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if raw.lower() in ("none", "null", ""):
        return None
    return raw


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply ``(dotted_key, raw_value)`` pairs to a RunConfig."""
    sections = {"pipeline": {}, "eval": {}}
    top = {}
    for key, raw in pairs:
        head, _, rest = key.partition(".")
        if head in sections and rest:
            target = getattr(cfg, head)
            names = {f.name for f in fields(target)}
            if rest not in names:
                raise KeyError(key)
            sections[head][rest] = _parse_value(raw, getattr(target, rest))
        elif head in {f.name for f in fields(cfg)} and not rest and head not in sections:
            top[head] = _parse_value(raw, getattr(cfg, head))
        else:
            raise KeyError(key)
    return replace(
        cfg,
        pipeline=replace(cfg.pipeline, **sections["pipeline"]),
        eval=replace(cfg.eval, **sections["eval"]),
        **top,
    )


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise MalformedFile(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = text.partition("=")
        pairs.append((key.strip(), value, lineno))
    cfg = base or RunConfig()
    for key, value, lineno in pairs:
        try:
            cfg = apply_overrides(cfg, [(key, value)])
        except (KeyError, ValueError) as exc:
            raise MalformedFile(f"{path}:{lineno}: bad entry {key!r}: {exc}") from exc
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section in ("pipeline", "eval"):
        for f in fields(getattr(cfg, section)):
            v = getattr(getattr(cfg, section), f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{section}.{f.name} = {v}")
    for name in ("dataset", "output_dir", "params_path"):
        lines.append(f"{name} = {getattr(cfg, name)}")
    return "\n".join(lines) + "\n"


def as_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
