import numpy as np
import pytest

from hiermatch.errors import DimensionMismatch, EmptySet, MalformedFile
from hiermatch.geometry import RigidTransform, rot_z
from hiermatch.nn import (
    AdamState,
    DenseStack,
    LossConfig,
    ParamView,
    Tensor,
    adam_step,
    concat,
    l2_normalize,
    load_params,
    loss_total,
    loss_total_grad,
    maxpool,
    param,
    save_params,
    scheduled_lr,
    shared_mlp_forward,
    sigmoid,
    softmax,
)
from hiermatch.nn.gradcheck import numeric_grad, rel_error


def grad_of(build, x):
    """Analytic gradient of scalar ``build(Tensor)`` at ``x``."""
    t = param(x.copy())
    build(t).backward()
    return t.grad


def check(build, x, tol=1e-4):
    analytic = grad_of(build, x)
    numeric = numeric_grad(lambda v: float(build(Tensor(v)).data), x)
    assert rel_error(analytic, numeric) < tol


class TestForward:
    def test_zero_stack_relu(self):
        stack = DenseStack([(np.zeros((3, 4)), np.zeros(4), "relu")])
        assert np.all(shared_mlp_forward(stack, np.ones((5, 3))).data == 0)

    def test_identity_layer(self, rng):
        x = rng.normal(size=(6, 4))
        stack = DenseStack([(np.eye(4), np.zeros(4), "none")])
        assert np.array_equal(shared_mlp_forward(stack, x).data, x)

    def test_scalar_layer(self):
        stack = DenseStack([(np.array([[2.0]]), np.array([1.0]), "none")])
        assert shared_mlp_forward(stack, np.array([[3.0]])).data[0, 0] == 7.0

    def test_dimension_checks(self):
        with pytest.raises(DimensionMismatch):
            DenseStack([(np.zeros((3, 4)), np.zeros(4), "relu"), (np.zeros((5, 2)), np.zeros(2), "none")])
        with pytest.raises(DimensionMismatch):
            shared_mlp_forward(DenseStack([(np.zeros((3, 4)), np.zeros(4), "relu")]), np.ones((2, 5)))

    def test_permutation_equivariance(self, rng):
        stack = DenseStack([(rng.normal(size=(3, 5)), rng.normal(size=5), "relu"),
                            (rng.normal(size=(5, 2)), rng.normal(size=2), "sigmoid")])
        x = rng.normal(size=(7, 3))
        perm = rng.permutation(7)
        assert np.allclose(shared_mlp_forward(stack, x[perm]).data, shared_mlp_forward(stack, x).data[perm])

    def test_maxpool(self):
        assert np.array_equal(maxpool(np.array([[1.0, 0.0], [0.0, 1.0]])).data, [1.0, 1.0])
        assert np.array_equal(maxpool(np.array([[0.3, -2.0]])).data, [0.3, -2.0])
        with pytest.raises(EmptySet):
            maxpool(np.zeros((0, 2)))

    def test_maxpool_tie_gradient_to_lowest_index(self):
        x = param(np.array([[1.0], [1.0], [0.0]]))
        maxpool(x).sum().backward()
        assert np.array_equal(x.grad, [[1.0], [0.0], [0.0]])

    def test_softmax_examples(self):
        assert np.allclose(softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-15)
        assert np.allclose(softmax(np.log([1.0, 2.0, 3.0])), [1 / 6, 2 / 6, 3 / 6], atol=1e-12)
        s = np.array([3.0, -1.0, 0.5])
        assert np.allclose(softmax(s), softmax(s + 1000.0), atol=1e-12)

    def test_softmax_contract(self, rng):
        for _ in range(20):
            out = softmax(rng.normal(scale=50, size=(4, 9)))
            assert np.all(out > 0)
            assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_sigmoid_range_and_stability(self):
        out = sigmoid(np.array([-800.0, 0.0, 800.0]))
        assert np.all(np.isfinite(out)) and out[1] == 0.5


class TestGradients:
    @pytest.mark.parametrize("seed", range(10))
    def test_dense_relu_sigmoid(self, seed):
        r = np.random.default_rng(seed)
        W1, b1 = r.normal(size=(4, 3)), r.normal(size=3)
        W2, b2 = r.normal(size=(3, 2)), r.normal(size=2)
        x = r.normal(size=(5, 4))
        c = r.normal(size=(5, 2))

        def through_w(w):
            return ((( Tensor(x) @ w + b1).relu() @ W2 + b2).sigmoid() * c).sum()

        def through_x(v):
            return (((v @ Tensor(W1) + b1).relu() @ W2 + b2).sigmoid() * c).sum()

        check(through_w, W1)
        check(through_x, x)

    @pytest.mark.parametrize("seed", range(10))
    def test_softmax_maxpool(self, seed):
        r = np.random.default_rng(100 + seed)
        x = r.normal(size=(3, 6))
        c = r.normal(size=(3, 6))
        check(lambda v: (v.softmax(axis=1) * c).sum(), x)
        check(lambda v: (v.max(axis=0) * c[0]).sum(), x)

    def test_softmax_constant_sum_has_zero_gradient(self, rng):
        t = param(rng.normal(size=(2, 5)))
        t.softmax(axis=1).sum().backward()
        assert np.abs(t.grad).max() < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_misc_ops(self, seed):
        r = np.random.default_rng(200 + seed)
        x = r.normal(size=(4, 3))
        c = r.normal(size=(4, 3))
        check(lambda v: (l2_normalize(v, axis=1) * c).sum(), x)
        check(lambda v: (concat([v, v * 2.0], axis=0).mean(axis=0) * c[0]).sum(), x)
        check(lambda v: ((v * v + 1.0).sqrt() / (v * v + 2.0)).sum(), x)
        check(lambda v: (v[[0, 2, 2]] * c[:3]).sum(), x)
        check(lambda v: (v.reshape(3, 4).broadcast_to((2, 3, 4)) * 1.5).sum(), x)

    def test_dense_layer_gradient_4x3(self, rng):
        W = rng.normal(size=(4, 3))
        x = rng.normal(size=(6, 4))
        c = rng.normal(size=(6, 3))
        check(lambda w: ((Tensor(x) @ w) * c).sum(), W, tol=1e-5)

    @pytest.mark.parametrize("seed", range(10))
    def test_loss_gradient(self, seed):
        r = np.random.default_rng(300 + seed)
        gt = RigidTransform(rot_z(r.uniform(-90, 90)), r.normal(size=3))
        est = RigidTransform(rot_z(r.uniform(-90, 90)), r.normal(size=3))
        g_R, g_t = loss_total_grad(est, gt)
        f_R = lambda R: loss_total(RigidTransform(R, est.t), gt)  # noqa: E731
        f_t = lambda t: loss_total(RigidTransform(est.R, t), gt)  # noqa: E731
        assert rel_error(g_R, numeric_grad(f_R, est.R)) < 1e-4
        assert rel_error(g_t, numeric_grad(f_t, est.t)) < 1e-4

    def test_loss_gradient_at_optimum(self):
        gt = RigidTransform(rot_z(10), np.array([1.0, 2.0, 3.0]))
        g_R, g_t = loss_total_grad(gt, gt)
        num = numeric_grad(lambda t: loss_total(RigidTransform(gt.R, t), gt), gt.t)
        # |.| has a kink at zero; central differences of a symmetric cone vanish too
        assert np.linalg.norm(g_t) == 0 and np.linalg.norm(num) < 1e-4


class TestLoss:
    def test_examples(self):
        gt = RigidTransform(rot_z(25), np.array([1.0, 1.0, 1.0]))
        assert abs(loss_total(gt, gt)) < 1e-12
        shifted = RigidTransform(gt.R, gt.t + [3, 4, 0])
        assert abs(loss_total(shifted, gt) - 5.0) < 1e-9
        flipped = RigidTransform(gt.R @ rot_z(180).T, gt.t)
        assert abs(loss_total(flipped, gt, LossConfig(1.8)) - 1.8 * 2 * np.sqrt(2)) < 1e-9

    def test_alpha_positive(self):
        with pytest.raises(ValueError):
            LossConfig(0.0)


class TestAdam:
    def test_zero_gradient(self, rng):
        p = {"w": rng.normal(size=3)}
        out = adam_step(p, {"w": np.zeros(3)}, AdamState(), 0.01, 0)
        assert np.array_equal(out["w"], p["w"])

    def test_constant_gradient_step_tends_to_lr(self):
        p = {"w": np.zeros(2)}
        state = AdamState()
        for _ in range(2000):
            prev = p["w"].copy()
            p = adam_step(p, {"w": np.array([0.3, -5.0])}, state, 0.01, 0)
        assert np.allclose(np.abs(p["w"] - prev), 0.01, rtol=1e-6)

    def test_schedule(self):
        assert scheduled_lr(0.0095, 9) == 0.0095
        assert scheduled_lr(0.0095, 10) == 0.0095 / 2
        assert scheduled_lr(0.0095, 25) == 0.0095 / 4

    def test_missing_gradients_untouched(self, rng):
        p = {"a": rng.normal(size=2), "b": rng.normal(size=2)}
        out = adam_step(p, {"a": np.ones(2)}, AdamState(), 0.1, 0)
        assert np.array_equal(out["b"], p["b"]) and not np.array_equal(out["a"], p["a"])


class TestParamView:
    def test_frozen_prefix(self, rng):
        params = {"detector.w": rng.normal(size=3), "coarse.w": rng.normal(size=3)}
        view = ParamView(params, requires_grad=True, frozen=("detector.",))
        (view["detector.w"] * view["coarse.w"]).sum().backward()
        grads = view.grads()
        assert set(grads) == {"coarse.w"}
        assert np.allclose(grads["coarse.w"], params["detector.w"])


class TestSerialize:
    def test_round_trip(self, tmp_path, rng):
        params = {"b.x": rng.normal(size=(3, 4)), "a": rng.normal(size=5), "s": np.array(2.5)}
        path = tmp_path / "p.hdmn"
        save_params(params, path)
        raw = path.read_bytes()
        assert raw[:4] == b"HDMN" and int.from_bytes(raw[4:8], "little") == 1
        back = load_params(path)
        assert set(back) == set(params)
        for k in params:
            assert np.array_equal(back[k], params[k])

    @pytest.mark.parametrize(
        "mutate,needle",
        [
            (lambda b: b"XXXX" + b[4:], "byte 0"),
            (lambda b: b[:4] + (7).to_bytes(4, "little") + b[8:], "version"),
            (lambda b: b[:-3], "truncated"),
        ],
    )
    def test_malformed(self, tmp_path, rng, mutate, needle):
        path = tmp_path / "p.hdmn"
        save_params({"w": rng.normal(size=4)}, path)
        path.write_bytes(mutate(path.read_bytes()))
        with pytest.raises(MalformedFile, match=needle):
            load_params(path)
