"""Readers and writers for scans, poses and pair lists.

Every reader rejects malformed input with a :class:`MalformedFile` that
names the byte offset or 1-based line number of the problem.
"""
from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .cloud import PointCloud
from .errors import EmptyDataset, MalformedFile
from .geometry import RigidTransform, project_to_so3
from .synthetic import ScenePairSpec, generate_pair

ORTHO_TOL = 1e-6
PAIR_HEADER = ["src_path", "tgt_path", "gt_pose_line"]
PAIR_LIST = "pairs.csv"
GT_POSES = "gt_poses.txt"


# KITTI velodyne scans

def read_kitti_bin(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        whole = len(raw) - len(raw) % 16
        raise MalformedFile(f"{path}: length {len(raw)} is not a multiple of 16 (trailing bytes at offset {whole})")
    rec = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    bad = ~np.isfinite(rec)
    if bad.any():
        flat = int(np.flatnonzero(bad.ravel())[0])
        raise MalformedFile(f"{path}: non-finite value at byte offset {4 * flat}")
    data = rec.astype(np.float64)
    return PointCloud(data[:, :3], data[:, 3])


def write_kitti_bin(cloud: PointCloud, path) -> None:
    rec = np.zeros((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.points
    if cloud.intensity is not None:
        rec[:, 3] = cloud.intensity
    Path(path).write_bytes(rec.tobytes())


# pose files (row-major 3x4 [R|t], one per line)

def parse_pose_line(line: str, where: str = "pose") -> RigidTransform:
    tokens = line.split()
    if len(tokens) != 12:
        raise MalformedFile(f"{where}: expected 12 values, got {len(tokens)}")
    try:
        vals = np.array([float(tok) for tok in tokens])
    except ValueError as exc:
        raise MalformedFile(f"{where}: non-numeric token ({exc})") from None
    if not np.all(np.isfinite(vals)):
        raise MalformedFile(f"{where}: non-finite value")
    M = vals.reshape(3, 4)
    R, t = M[:, :3], M[:, 3]
    drift = float(np.abs(R.T @ R - np.eye(3)).max())
    if drift > ORTHO_TOL or np.linalg.det(R) < 0:
        warnings.warn(f"{where}: rotation drift {drift:.3g}, re-orthonormalized", stacklevel=3)
        R = project_to_so3(R)
    return RigidTransform(R, t)


def format_pose_line(T: RigidTransform) -> str:
    M = np.hstack([T.R, T.t[:, None]])
    return " ".join(repr(float(v)) for v in M.ravel())


def read_pose_file(path) -> List[RigidTransform]:
    """One transform per non-blank line."""
    poses = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                poses.append(parse_pose_line(line, f"{path}:{lineno}"))
    return poses


def write_pose_file(poses: Sequence[RigidTransform], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for T in poses:
            fh.write(format_pose_line(T) + "\n")


# ASCII PLY and XYZ

def write_ply(cloud: PointCloud, path, properties: Optional[Dict[str, np.ndarray]] = None) -> None:
    """ASCII PLY with double x, y, z and optional extra scalar properties
    (for instance ``{"confidence": conf}``)."""
    properties = dict(properties or {})
    cols = [cloud.points]
    for name, vals in properties.items():
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        if len(vals) != len(cloud):
            raise ValueError(f"property {name!r} has {len(vals)} values for {len(cloud)} points")
        cols.append(vals[:, None])
    table = np.hstack(cols) if len(cloud) else np.zeros((0, 3 + len(properties)))
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property double {c}" for c in ("x", "y", "z")]
    lines += [f"property double {name}" for name in properties]
    lines.append("end_header")
    lines += [" ".join(repr(float(v)) for v in row) for row in table]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ply(path) -> Tuple[PointCloud, Dict[str, np.ndarray]]:
    """Read an ASCII PLY vertex list; returns the cloud and any extra properties."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MalformedFile(f"{path}:1: missing 'ply' magic")
    n_vertex, props, in_vertex, body = None, [], False, None
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise MalformedFile(f"{path}:{i}: only ASCII PLY is supported")
        elif tok[0] == "element":
            if len(tok) != 3:
                raise MalformedFile(f"{path}:{i}: bad element line")
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tok[2])
                except ValueError:
                    raise MalformedFile(f"{path}:{i}: bad vertex count {tok[2]!r}") from None
        elif tok[0] == "property":
            if in_vertex:
                if len(tok) != 3:
                    raise MalformedFile(f"{path}:{i}: unsupported property line")
                props.append(tok[2])
        elif tok[0] == "end_header":
            body = i
            break
        else:
            raise MalformedFile(f"{path}:{i}: unexpected header line")
    if body is None or n_vertex is None:
        raise MalformedFile(f"{path}: header lacks end_header or vertex element")
    if props[:3] != ["x", "y", "z"]:
        raise MalformedFile(f"{path}: first vertex properties must be x, y, z")
    rows = []
    for j in range(n_vertex):
        lineno = body + 1 + j
        if lineno > len(lines):
            raise MalformedFile(f"{path}:{lineno}: expected {n_vertex} vertices, file ends after {j}")
        rows.append(_parse_row(lines[lineno - 1], len(props), f"{path}:{lineno}"))
    table = np.array(rows, dtype=np.float64).reshape(n_vertex, len(props))
    extras = {name: table[:, 3 + k].copy() for k, name in enumerate(props[3:])}
    return PointCloud(table[:, :3]), extras


def _parse_row(line: str, n: int, where: str) -> List[float]:
    tok = line.split()
    if len(tok) != n:
        raise MalformedFile(f"{where}: expected {n} values, got {len(tok)}")
    try:
        vals = [float(t) for t in tok]
    except ValueError as exc:
        raise MalformedFile(f"{where}: {exc}") from None
    if not all(np.isfinite(vals)):
        raise MalformedFile(f"{where}: non-finite value")
    return vals


def read_xyz(path) -> PointCloud:
    """One ``x y z`` triple per line; blank lines are skipped."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                rows.append(_parse_row(line, 3, f"{path}:{lineno}"))
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def write_xyz(cloud: PointCloud, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in cloud.points:
            fh.write(" ".join(repr(float(v)) for v in p) + "\n")


def read_cloud(path) -> PointCloud:
    ext = Path(path).suffix.lower()
    if ext == ".bin":
        return read_kitti_bin(path)
    if ext == ".ply":
        return read_ply(path)[0]
    if ext in (".xyz", ".txt"):
        return read_xyz(path)
    raise MalformedFile(f"{path}: unknown point cloud extension {ext!r}")


def dump_pyramid(pyramid, directory, prefix: str = "level") -> List[Path]:
    """One PLY per pyramid level, with the keypoint uncertainty as a property."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for lvl in pyramid:
        path = directory / f"{prefix}{lvl.level}.ply"
        write_ply(PointCloud(lvl.keypoints), path, {"uncertainty": lvl.uncertainties})
        out.append(path)
    return out


# pair lists and datasets

@dataclass(frozen=True)
class PairRef:
    pair_id: int
    src_path: Path
    tgt_path: Path
    gt: Optional[RigidTransform]


@dataclass
class PairSample:
    pair_id: int
    src: PointCloud
    tgt: PointCloud
    gt: Optional[RigidTransform]


def read_pair_list(path) -> List[PairRef]:
    """CSV of ``src_path,tgt_path,gt_pose_line``.

    Paths are relative to the CSV's directory.  ``gt_pose_line`` holds the
    twelve numbers of a pose-file line and may be empty.  A header row is
    optional.
    """
    path = Path(path)
    base = path.parent
    refs = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not any(c.strip() for c in row):
                continue
            if [c.strip() for c in row] == PAIR_HEADER:
                continue
            if len(row) not in (2, 3):
                raise MalformedFile(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            gt_text = row[2].strip() if len(row) == 3 else ""
            gt = parse_pose_line(gt_text, f"{path}:{lineno}") if gt_text else None
            refs.append(PairRef(len(refs), base / row[0].strip(), base / row[1].strip(), gt))
    return refs


def write_pair_list(refs: Sequence[PairRef], path) -> None:
    base = Path(path).parent
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIR_HEADER)
        for r in refs:
            w.writerow([
                os.path.relpath(r.src_path, base),
                os.path.relpath(r.tgt_path, base),
                format_pose_line(r.gt) if r.gt is not None else "",
            ])


def find_pair_list(dataset) -> Path:
    """Resolve a dataset argument (directory or CSV) to its pair list."""
    p = Path(dataset)
    if p.is_file():
        return p
    if p.is_dir() and (p / PAIR_LIST).is_file():
        return p / PAIR_LIST
    raise EmptyDataset(f"no pair list found at {dataset}")


def load_dataset(dataset) -> List[PairRef]:
    refs = read_pair_list(find_pair_list(dataset))
    if not refs:
        raise EmptyDataset(f"pair list for {dataset} has no pairs")
    return refs


def iter_samples(refs: Sequence[PairRef]) -> Iterator[PairSample]:
    for r in refs:
        yield PairSample(r.pair_id, read_cloud(r.src_path), read_cloud(r.tgt_path), r.gt)


def synthetic_samples(n: int, spec: ScenePairSpec = ScenePairSpec()) -> Iterator[PairSample]:
    """``n`` in-memory pairs with seeds ``spec.seed .. spec.seed + n - 1``."""
    from dataclasses import replace

    for i in range(n):
        src, tgt, gt = generate_pair(replace(spec, seed=spec.seed + i))
        yield PairSample(i, src, tgt, gt)


def write_synthetic_dataset(directory, n: int, spec: ScenePairSpec = ScenePairSpec()) -> List[PairRef]:
    """Write ``n`` pairs as KITTI scans plus ``pairs.csv`` and ``gt_poses.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    refs = []
    for sample in synthetic_samples(n, spec):
        src_path = directory / f"pair_{sample.pair_id:04d}_src.bin"
        tgt_path = directory / f"pair_{sample.pair_id:04d}_tgt.bin"
        write_kitti_bin(sample.src, src_path)
        write_kitti_bin(sample.tgt, tgt_path)
        refs.append(PairRef(sample.pair_id, src_path, tgt_path, sample.gt))
    write_pair_list(refs, directory / PAIR_LIST)
    write_pose_file([r.gt for r in refs], directory / GT_POSES)
    return refs
