import numpy as np
import pytest

from hiermatch.errors import DegenerateInput
from hiermatch.evaluation import rre
from hiermatch.geometry import RigidTransform
from hiermatch.synthetic import ScenePairSpec, generate_pair


def test_exact_copy_when_everything_is_off():
    src, tgt, gt = generate_pair(ScenePairSpec(seed=1, noise_sigma=0, overlap=1.0, rotation_deg=0, translation_m=0))
    assert np.allclose(gt.as_matrix(), np.eye(4))
    assert np.array_equal(src.points, tgt.points)


def test_noiseless_full_overlap_is_exact_motion():
    src, tgt, gt = generate_pair(ScenePairSpec(seed=2, noise_sigma=0, overlap=1.0))
    assert np.abs(gt.transform_points(src.points) - tgt.points).max() < 1e-9


def test_same_seed_same_pair():
    a = generate_pair(ScenePairSpec(seed=7))
    b = generate_pair(ScenePairSpec(seed=7))
    assert np.array_equal(a[0].points, b[0].points) and np.array_equal(a[1].points, b[1].points)
    c = generate_pair(ScenePairSpec(seed=8))
    assert len(c[0]) != len(a[0]) or not np.array_equal(c[0].points, a[0].points)


@pytest.mark.parametrize("seed", range(10))
def test_motion_within_ranges(seed):
    spec = ScenePairSpec(seed=seed, rotation_deg=20, translation_m=2)
    _, _, gt = generate_pair(spec)
    assert rre(gt, RigidTransform.identity()) <= 20 + 1e-9
    assert np.linalg.norm(gt.t) <= 2 + 1e-9


def test_overlap_fraction():
    spec = ScenePairSpec(seed=4, overlap=0.5, noise_sigma=0)
    src, tgt, gt = generate_pair(spec)
    keep = 1 / (2 - 0.5)
    # each cloud keeps roughly 1/(2 - overlap) of the scene
    full, _, _ = generate_pair(ScenePairSpec(seed=4, overlap=1.0, noise_sigma=0))
    assert abs(len(src) / len(full) - keep) < 0.02


def test_invalid_specs():
    with pytest.raises(DegenerateInput):
        generate_pair(ScenePairSpec(n_planes=0, n_boxes=0, n_scatter=0))
    with pytest.raises(ValueError):
        ScenePairSpec(overlap=0)
    with pytest.raises(ValueError):
        ScenePairSpec(noise_sigma=-1)
