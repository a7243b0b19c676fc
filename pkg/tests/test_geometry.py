import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiermatch.cloud import PointCloud
from hiermatch.errors import DegenerateInput
from hiermatch.geometry import (
    RigidTransform,
    apply,
    axis_angle,
    compose,
    euler_zyx,
    invert,
    kabsch_objective,
    project_to_so3,
    rot_z,
    weighted_kabsch,
)


def random_rotation(rng):
    q = rng.normal(size=4)
    return project_to_so3(axis_angle(q[:3], np.degrees(2 * np.arccos(abs(q[3]) / np.linalg.norm(q)))))


def assert_proper(R, tol=1e-9):
    assert np.allclose(R.T @ R, np.eye(3), atol=tol)
    assert abs(np.linalg.det(R) - 1.0) < tol


class TestKabsch:
    def test_identity(self, rng):
        P = rng.normal(size=(20, 3))
        T = weighted_kabsch(P, P)
        assert np.allclose(T.R, np.eye(3), atol=1e-12)
        assert np.allclose(T.t, 0, atol=1e-12)

    def test_recovers_rz30(self, rng):
        P = rng.normal(size=(10, 3))
        Q = P @ rot_z(30).T + np.array([1.0, 0, 0])
        T = weighted_kabsch(P, Q)
        assert np.abs(T.R - rot_z(30)).max() < 1e-9
        assert np.abs(T.t - [1, 0, 0]).max() < 1e-9
        assert np.abs(T.transform_points(P) - Q).max() < 1e-9

    def test_zero_weight_outlier(self, rng):
        gt = RigidTransform(rot_z(40), np.array([0.5, -1.0, 2.0]))
        P = rng.normal(size=(3, 3))
        Q = gt.transform_points(P)
        P4 = np.vstack([P, [10.0, 10.0, 10.0]])
        Q4 = np.vstack([Q, [-50.0, 3.0, 7.0]])
        T = weighted_kabsch(P4, Q4, [1.0, 1.0, 1.0, 0.0])
        assert np.abs(T.R - gt.R).max() < 1e-9
        assert np.abs(T.t - gt.t).max() < 1e-9

    def test_reflection_forbidden(self, rng):
        P = rng.normal(size=(15, 3))
        Q = P * np.array([1.0, 1.0, -1.0])  # mirror image
        T = weighted_kabsch(P, Q)
        assert_proper(T.R)

    @pytest.mark.parametrize(
        "src,tgt,w",
        [
            (np.zeros((2, 3)), np.zeros((2, 3)), None),
            (np.ones((4, 3)), np.ones((4, 3)), None),
            (np.eye(3), np.eye(3), [0.0, 0.0, 0.0]),
            (np.eye(3), np.eye(3), [1.0, -1.0, 1.0]),
            (np.eye(3), np.eye(3), [1.0, np.nan, 1.0]),
            (np.eye(3), np.eye(4)[:, :3], None),
        ],
    )
    def test_degenerate(self, src, tgt, w):
        with pytest.raises(DegenerateInput):
            weighted_kabsch(src, tgt, w)

    def test_weight_scaling_invariance(self, rng):
        P = rng.normal(size=(12, 3))
        Q = P @ random_rotation(rng).T + rng.normal(size=3) + 0.05 * rng.normal(size=(12, 3))
        w = rng.random(12)
        a, b = weighted_kabsch(P, Q, w), weighted_kabsch(P, Q, 37.5 * w)
        assert np.abs(a.R - b.R).max() < 1e-9 and np.abs(a.t - b.t).max() < 1e-9

    def test_permutation_invariance(self, rng):
        P = rng.normal(size=(12, 3))
        Q = P @ random_rotation(rng).T + 0.1 * rng.normal(size=(12, 3))
        w = rng.random(12)
        perm = rng.permutation(12)
        a, b = weighted_kabsch(P, Q, w), weighted_kabsch(P[perm], Q[perm], w[perm])
        assert np.abs(a.R - b.R).max() < 1e-12 and np.abs(a.t - b.t).max() < 1e-12

    def test_grid_oracle(self, rng):
        # the closed form beats a coarse SO(3) x translation grid
        P = rng.normal(size=(5, 3))
        Q = P @ euler_zyx(20, 10, -5).T + [0.3, 0.1, -0.2] + 0.2 * rng.normal(size=(5, 3))
        w = rng.random(5) + 0.1
        best = kabsch_objective(weighted_kabsch(P, Q, w), P, Q, w)
        angles = np.arange(-30, 31, 10)
        for yaw, pitch, roll in itertools.product(angles, angles, angles):
            R = euler_zyx(yaw, pitch, roll)
            t0 = (w @ (Q - P @ R.T)) / w.sum()  # optimal t for this R
            assert best <= kabsch_objective(RigidTransform(R, t0), P, Q, w) + 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_output_is_proper_rotation(self, seed):
        r = np.random.default_rng(seed)
        P = r.normal(size=(8, 3))
        Q = r.normal(size=(8, 3))
        assert_proper(weighted_kabsch(P, Q, r.random(8) + 1e-3).R)


class TestAlgebra:
    def test_compose_identity_left(self):
        T = RigidTransform(rot_z(17), np.array([1.0, 2.0, 3.0]))
        C = compose(RigidTransform.identity(), T)
        assert np.allclose(C.R, T.R) and np.allclose(C.t, T.t)

    def test_compose_example(self):
        C = compose(RigidTransform(rot_z(90), np.zeros(3)), RigidTransform(np.eye(3), np.array([1.0, 0, 0])))
        assert np.allclose(C.transform_points(np.zeros((1, 3)))[0], [0, 1, 0], atol=1e-12)

    def test_compose_with_inverse(self, rng):
        T = RigidTransform(random_rotation(rng), rng.normal(size=3))
        C = compose(invert(T), T)
        assert np.abs(C.R - np.eye(3)).max() < 1e-12 and np.abs(C.t).max() < 1e-12

    def test_compose_matches_sequential_application(self, rng):
        A = RigidTransform(random_rotation(rng), rng.normal(size=3))
        B = RigidTransform(random_rotation(rng), rng.normal(size=3))
        P = rng.normal(size=(6, 3))
        assert np.allclose((A @ B).transform_points(P), A.transform_points(B.transform_points(P)), atol=1e-12)

    def test_apply_examples(self):
        P = PointCloud(np.array([[0.0, 0, 0]]))
        assert np.allclose(apply(RigidTransform.identity(), P).points, P.points)
        assert np.allclose(apply(RigidTransform(np.eye(3), np.array([1.0, 2, 3])), P).points, [[1, 2, 3]])
        Q = PointCloud(np.array([[1.0, 0, 0]]))
        assert np.allclose(apply(RigidTransform(rot_z(90), np.zeros(3)), Q).points, [[0, 1, 0]], atol=1e-12)

    def test_invert_examples(self):
        I = invert(RigidTransform.identity())
        assert np.allclose(I.R, np.eye(3)) and np.allclose(I.t, 0)
        T = invert(RigidTransform(np.eye(3), np.array([1.0, 0, 0])))
        assert np.allclose(T.t, [-1, 0, 0])

    def test_validity_check(self, rng):
        assert RigidTransform(random_rotation(rng), np.zeros(3)).is_valid()
        assert not RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3)).is_valid()
        assert not RigidTransform(2 * np.eye(3), np.zeros(3)).is_valid()
