"""End-to-end pass/fail checks, one per release criterion, at the stated tolerances."""
import itertools
import struct
import time
import warnings

import numpy as np
import pytest

from hiermatch.cli import main
from hiermatch.cloud import PointCloud
from hiermatch.coarse import cosine_similarity, feature_consistency
from hiermatch.config import EvalThresholds, PipelineConfig
from hiermatch.errors import MalformedFile
from hiermatch.evaluation import ablation_suite, benchmark, rre, rte
from hiermatch.fine import refine_layer, run_pipeline, upsample_confidence
from hiermatch.geometry import RigidTransform, axis_angle, euler_zyx, kabsch_objective, rot_z, weighted_kabsch
from hiermatch.io import (
    parse_pose_line,
    read_kitti_bin,
    read_pair_list,
    read_ply,
    read_pose_file,
    synthetic_samples,
    write_kitti_bin,
    write_pose_file,
)
from hiermatch.nn import DenseStack, Tensor, loss_total, loss_total_grad, param, shared_mlp_forward
from hiermatch.nn.gradcheck import numeric_grad, rel_error
from hiermatch.pyramid import PyramidLevel, build_pyramid
from hiermatch.synthetic import ScenePairSpec, generate_pair
from hiermatch.training import TrainConfig, kabsch_fd_grad, save_result, stage_loss_batch, train


def random_rotation(rng, max_deg=180.0):
    return axis_angle(rng.normal(size=3), rng.uniform(0, max_deg))


# closed-form alignment

def test_kabsch_exact_and_grid_optimal():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    for _ in range(100):
        P = rng.normal(size=(100, 3)) * 10
        gt = RigidTransform(random_rotation(rng), rng.uniform(-20, 20, 3))
        est = weighted_kabsch(P, gt.transform_points(P))
        assert rte(est, gt) < 1e-6 and rre(est, gt) < 1e-6

    # every ZYX Euler rotation on a 5 degree grid, each with its best translation,
    # which is at least as good as any translation grid around the centroid offset
    yaw = np.deg2rad(np.arange(-180, 180, 5))
    pitch = np.deg2rad(np.arange(-90, 91, 5))
    roll = np.deg2rad(np.arange(-180, 180, 5))
    Y, Pi, Ro = (a.ravel() for a in np.meshgrid(yaw, pitch, roll, indexing="ij"))
    cy, sy, cp, sp, cr, sr = np.cos(Y), np.sin(Y), np.cos(Pi), np.sin(Pi), np.cos(Ro), np.sin(Ro)
    grid = np.stack([
        np.stack([cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr], -1),
        np.stack([sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr], -1),
        np.stack([-sp, cp * sr, cp * cr], -1),
    ], 1)
    for _ in range(20):
        m = int(rng.integers(3, 7))
        P = rng.normal(size=(m, 3))
        Q = P @ random_rotation(rng).T + rng.normal(size=3) + 0.3 * rng.normal(size=(m, 3))
        w = rng.uniform(0.05, 1.0, m)
        best = kabsch_objective(weighted_kabsch(P, Q, w), P, Q, w)
        wn = w / w.sum()
        Pc, Qc = P - wn @ P, Q - wn @ Q
        # sum_k w_k |R p_k - q_k|^2 with centred data and optimal translation
        const = w @ (np.sum(Pc**2, 1) + np.sum(Qc**2, 1))
        M = np.einsum("k,ki,kj->ij", w, Qc, Pc)
        grid_obj = const - 2.0 * np.einsum("nij,ij->n", grid, M)
        assert best <= grid_obj.min() + 1e-9
    assert time.perf_counter() - t0 < 10.0


# worked formula values

def test_formula_unit_values():
    assert abs(cosine_similarity([1.0, 0.0], [[1 / np.sqrt(2), 1 / np.sqrt(2)]])[0] - 1 / np.sqrt(2)) < 1e-9
    assert abs(cosine_similarity([0.3, -2.0], [[0.3, -2.0]])[0] - 1.0) < 1e-9
    # members at cosine 0.5 and 0.25 to the centre
    members = [[0.5, np.sqrt(0.75)], [0.25, np.sqrt(1 - 0.0625)]]
    assert np.abs(feature_consistency([1.0, 0.0], members) - [1.0, 0.5]).max() < 1e-9

    deep = np.array([[1.0, 0, 0], [-2.0, 0, 0]])
    assert abs(upsample_confidence(np.zeros((1, 3)), deep, np.array([1.0, 0.4]), 2)[0] - 0.8) < 1e-9

    I = RigidTransform.identity()
    assert abs(rre(RigidTransform(rot_z(90), np.zeros(3)), I) - 90.0) < 1e-9
    assert abs(rre(RigidTransform(rot_z(180), np.zeros(3)), I) - 180.0) < 1e-9

    gt = RigidTransform(rot_z(25), np.array([1.0, -1.0, 2.0]))
    assert abs(loss_total(RigidTransform(gt.R, gt.t + [3, 4, 0]), gt) - 5.0) < 1e-9
    flipped = RigidTransform(gt.R @ rot_z(180).T, gt.t)
    assert abs(loss_total(flipped, gt) - 1.8 * 2 * np.sqrt(2)) < 1e-9


# deterministic pipeline on the default synthetic scenes

@pytest.fixture(scope="module")
def default_run():
    return benchmark(synthetic_samples(100, ScenePairSpec(seed=2000)), PipelineConfig(), timing=False)


def test_pipeline_recovery(default_run):
    assert default_run.recall >= 0.90
    assert default_run.median("rte_m") <= 0.3
    assert default_run.median("rre_deg") <= 1.5


def test_ablation_direction():
    samples = list(synthetic_samples(200, ScenePairSpec(seed=5000, noise_sigma=0.1, overlap=0.5)))
    reports = ablation_suite(samples, PipelineConfig(), timing=False,
                             variants=["full", "w/o{DM,STD,f_s}", "w/o mask"])
    full, single, unmasked = reports["full"], reports["w/o{DM,STD,f_s}"], reports["w/o mask"]
    assert full.recall >= single.recall
    assert full.rte_mean <= single.rte_mean + 0.02
    assert unmasked.recall <= full.recall + 0.01


def test_fine_monotone_and_fixed_point(default_run):
    assert default_run.stage_mean("refine_l1") <= default_run.stage_mean("coarse")

    cfg = PipelineConfig(input_points=2048, n_keypoints=(256, 128, 64), desc_dims=(16, 32, 64))
    rng = np.random.default_rng(9)
    cases = 0
    for seed in range(10):
        src, _, _ = generate_pair(ScenePairSpec(seed=300 + seed))
        pyr = build_pyramid(src, cfg)
        for lvl in pyr[:2]:
            T = RigidTransform(random_rotation(rng, 45), rng.normal(size=3))
            tgt = PyramidLevel(T.transform_points(lvl.keypoints), lvl.descriptors.copy(), lvl.uncertainties.copy(),
                               lvl.level)
            res = refine_layer(lvl, tgt, T, rng.uniform(0.2, 1.0, len(lvl)), cfg)
            assert np.abs(res.delta.as_matrix() - np.eye(4)).max() < 1e-6
            cases += 1
    assert cases == 20


# learned-mode gradients

def check(build, x):
    t = param(x.copy())
    build(t).backward()
    num = numeric_grad(lambda v: float(build(Tensor(v)).data), x)
    assert rel_error(t.grad, num) < 1e-4


def test_gradient_suite():
    for i in range(50):
        r = np.random.default_rng(7000 + i)
        x = r.normal(size=(5, 4))
        W, b = r.normal(size=(4, 3)), r.normal(size=3)
        c = r.normal(size=(5, 3))
        check(lambda w: ((Tensor(x) @ w + b) * c).sum(), W)
        check(lambda v: ((v @ Tensor(W) + b).relu() * c).sum(), x)
        check(lambda v: ((v @ Tensor(W) + b).sigmoid() * c).sum(), x)
        check(lambda v: (v.softmax(axis=1) * x).sum() + (v.softmax(axis=0) * x[::-1]).sum(), x)
        check(lambda v: (v.max(axis=0) * x[0]).sum(), x)
        arrays = DenseStack.init_arrays(r, [4, 6, 3], "m")
        arrays = {k: v + 0.1 * r.normal(size=v.shape) for k, v in arrays.items()}
        stack = DenseStack.from_params(arrays, "m", ["relu", "sigmoid"])
        check(lambda v: (shared_mlp_forward(stack, v) * c).sum(), x)

        gt = RigidTransform(random_rotation(r, 90), r.normal(size=3))
        est = RigidTransform(random_rotation(r, 90), r.normal(size=3))
        g_R, g_t = loss_total_grad(est, gt)
        assert rel_error(g_R, numeric_grad(lambda R: loss_total(RigidTransform(R, est.t), gt), est.R)) < 1e-4
        assert rel_error(g_t, numeric_grad(lambda t: loss_total(RigidTransform(est.R, t), gt), est.t)) < 1e-4

        src = r.normal(size=(10, 3)) * 5
        T = RigidTransform(random_rotation(r, 30), r.normal(size=3))
        tgt = T.transform_points(src) + 0.1 * r.normal(size=src.shape)
        w = r.uniform(0.1, 1.0, 10)
        fn = lambda R, t: stage_loss_batch(R, t, RigidTransform.identity(), gt, 1.8)  # noqa: E731
        coarse, fine = kabsch_fd_grad(src, tgt, w, fn, 1e-4), kabsch_fd_grad(src, tgt, w, fn, 1e-5)
        for a, b_ in zip(coarse, fine):
            assert np.all(np.isfinite(a)) and np.linalg.norm(a - b_) <= 0.05 * np.linalg.norm(b_)


# toy training

def test_toy_training(tmp_path):
    t0 = time.perf_counter()
    result = train(TrainConfig())
    curve, _ = save_result(result, tmp_path)
    assert time.perf_counter() - t0 < 30 * 60
    assert result.final_loss <= 0.5 * result.initial_loss
    lines = curve.read_text().splitlines()
    assert lines[0] == "epoch,loss,lr" and len(lines) == 1 + 51 + 1


# determinism and file formats

def test_determinism_and_io(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", str(data), "-n", "3", "--seed", "77"]) == 0
    for run in ("a", "b"):
        assert main(["benchmark", str(data), "-o", str(tmp_path / run), "--seed", "5"]) == 0
    for name in ("pairs.csv", "recall_rte.csv", "recall_rre.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    capsys.readouterr()

    scan = data / "pair_0000_src.bin"
    write_kitti_bin(read_kitti_bin(scan), tmp_path / "copy.bin")
    assert (tmp_path / "copy.bin").read_bytes() == scan.read_bytes()
    poses = read_pose_file(data / "gt_poses.txt")
    write_pose_file(poses, tmp_path / "poses.txt")
    assert all(np.array_equal(a.as_matrix(), b.as_matrix())
               for a, b in zip(poses, read_pose_file(tmp_path / "poses.txt")))
    assert len(read_pair_list(data / "pairs.csv")) == 3

    bad = tmp_path / "bad.bin"
    bad.write_bytes(struct.pack("<5f", 1, 2, 3, 4, 5))
    with pytest.raises(MalformedFile, match="offset 16"):
        read_kitti_bin(bad)
    bad.write_bytes(struct.pack("<4f", 1, float("inf"), 3, 4))
    with pytest.raises(MalformedFile, match="offset 4"):
        read_kitti_bin(bad)
    (tmp_path / "p.txt").write_text("1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(MalformedFile, match="p.txt:1"):
        read_pose_file(tmp_path / "p.txt")
    with pytest.raises(MalformedFile, match="non-numeric"):
        parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 zero")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert parse_pose_line("2 0 0 0 0 1 0 0 0 0 1 0").is_valid()
    (tmp_path / "c.ply").write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\n"
                                    "property double y\nproperty double z\nend_header\n1 2\n")
    with pytest.raises(MalformedFile, match="c.ply:8"):
        read_ply(tmp_path / "c.ply")
    assert main(["benchmark", str(tmp_path / "missing")]) == 2
    assert main(["benchmark", str(tmp_path / "c.ply")]) == 2


# throughput

def test_single_registration_time():
    src, tgt, gt = generate_pair(ScenePairSpec(seed=4242))
    assert min(len(src), len(tgt)) >= 16384
    t0 = time.perf_counter()
    result = run_pipeline(src, tgt, PipelineConfig())
    assert time.perf_counter() - t0 < 5.0
    assert rte(result.transform, gt) < 2.0
