"""Score network: the three differentiation modes against finite
differences, the optimizer, and checkpoint serialization."""

import numpy as np
import pytest

from timescore.nn import (
    AdamState,
    DivergenceError,
    ScoreNet,
    adam_step,
    load_checkpoint,
    save_checkpoint,
)


def _finite_diff_params(net, fn, indices, h=1e-6):
    out = {}
    base = net.params.copy()
    for i in indices:
        net.params = base.copy()
        net.params[i] += h
        hi = fn()
        net.params[i] -= 2 * h
        lo = fn()
        out[i] = (hi - lo) / (2 * h)
    net.params = base
    return out


class TestForward:
    def test_zero_params_zero_output(self):
        net = ScoreNet(3, 2, hidden=(8, 8), seed=0)
        net.params = np.zeros(net.n_params)
        x = np.random.default_rng(0).normal(size=(4, 3))
        np.testing.assert_array_equal(net.forward(x, 0.5), np.zeros((4, 2)))

    def test_deterministic_given_seed(self):
        x = np.random.default_rng(1).normal(size=(2, 3))
        a = ScoreNet(3, 1, hidden=(16,), seed=5).forward(x, 0.3)
        b = ScoreNet(3, 1, hidden=(16,), seed=5).forward(x, 0.3)
        np.testing.assert_array_equal(a, b)

    def test_elu_continuity_at_kink(self):
        # single hidden unit wired to pass x through: outputs at
        # pre-activation +-1e-9 must differ by far less than 1e-6
        net = ScoreNet(1, 1, hidden=(1,), seed=0)
        net.params = np.zeros(net.n_params)
        net.params[0] = 1.0  # W1[0, 0]: pre-activation = x
        net.params[3] = 1.0  # W2[0, 0]: output = elu(x)
        hi = net.forward(np.array([1e-9]), 0.0)
        lo = net.forward(np.array([-1e-9]), 0.0)
        assert abs(hi[0] - lo[0]) < 1e-6

    def test_single_point_shape(self):
        net = ScoreNet(2, 2, hidden=(4,), seed=0)
        assert net.forward(np.zeros(2), 0.1).shape == (2,)
        assert net.forward(np.zeros((5, 2)), 0.1).shape == (5, 2)


class TestGradParams:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        net = ScoreNet(3, 2, hidden=(12, 10), seed=3)
        x = rng.normal(size=(4, 3))
        t = rng.uniform(0.1, 0.9, 4)
        up = rng.normal(size=(4, 2))
        g = net.grad_params(x, t, up)
        idx = rng.choice(net.n_params, 50, replace=False)
        fd = _finite_diff_params(net, lambda: float(np.sum(up * net.forward(x, t))), idx)
        for i, v in fd.items():
            assert g[i] == pytest.approx(v, rel=1e-4, abs=1e-8)

    def test_zero_upstream_zero_gradient(self):
        net = ScoreNet(2, 1, hidden=(6,), seed=0)
        g = net.grad_params(np.ones((3, 2)), 0.5, np.zeros((3, 1)))
        np.testing.assert_array_equal(g, np.zeros(net.n_params))

    def test_batch_additivity(self):
        rng = np.random.default_rng(4)
        net = ScoreNet(2, 1, hidden=(8,), seed=1)
        x = rng.normal(size=(5, 2))
        t = rng.uniform(0.1, 0.9, 5)
        up = rng.normal(size=(5, 1))
        whole = net.grad_params(x, t, up)
        parts = sum(net.grad_params(x[i], t[i], up[i]) for i in range(5))
        np.testing.assert_allclose(whole, parts, atol=1e-10)


class TestDtForward:
    def test_linear_model_exact(self):
        # no hidden layers: s(x, t) = w_x . x + w_t t + b, so ds/dt = w_t
        net = ScoreNet(2, 1, hidden=(), seed=9)
        w_t = net.params[2]
        _, ydot = net.dt_forward(np.array([0.4, -1.0]), 0.6)
        assert ydot[0] == pytest.approx(w_t, abs=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        net = ScoreNet(3, 2, hidden=(20, 16), seed=2)
        x = rng.normal(size=(6, 3))
        t = rng.uniform(0.1, 0.9, 6)
        _, ydot = net.dt_forward(x, t)
        h = 1e-5
        fd = (net.forward(x, t + h) - net.forward(x, t - h)) / (2 * h)
        np.testing.assert_allclose(ydot, fd, atol=1e-6)

    def test_nested_parameter_gradient(self):
        # gradient of the time derivative with respect to the parameters
        rng = np.random.default_rng(6)
        net = ScoreNet(2, 1, hidden=(10, 8), seed=4)
        x = rng.normal(size=(3, 2))
        t = rng.uniform(0.2, 0.8, 3)
        up_dt = rng.normal(size=(3, 1))
        g = net.grad_params(x, t, np.zeros((3, 1)), upstream_dt=up_dt)
        idx = rng.choice(net.n_params, 40, replace=False)
        fd = _finite_diff_params(
            net, lambda: float(np.sum(up_dt * net.dt_forward(x, t)[1])), idx
        )
        for i, v in fd.items():
            assert g[i] == pytest.approx(v, rel=1e-3, abs=1e-7)


class TestGradX:
    def test_zero_params_zero_jacobian(self):
        net = ScoreNet(3, 2, hidden=(6,), seed=0)
        net.params = np.zeros(net.n_params)
        np.testing.assert_array_equal(net.grad_x(np.ones(3), 0.5), np.zeros((2, 3)))

    def test_linear_model_equals_input_weight(self):
        net = ScoreNet(1, 1, hidden=(), seed=11)
        w_x = net.params[0]
        jac = net.grad_x(np.array([0.7]), 0.2)
        assert jac[0, 0] == pytest.approx(w_x, abs=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        net = ScoreNet(4, 3, hidden=(14, 12), seed=6)
        x = rng.normal(size=(3, 4))
        t = rng.uniform(0.1, 0.9, 3)
        jac = net.grad_x(x, t)
        h = 1e-6
        for d in range(4):
            xp, xm = x.copy(), x.copy()
            xp[:, d] += h
            xm[:, d] -= h
            fd = (net.forward(xp, t) - net.forward(xm, t)) / (2 * h)
            np.testing.assert_allclose(jac[:, :, d], fd, atol=1e-5)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = np.array([1.0, -2.0, 3.0])
        st = AdamState.for_params(p, lr=0.1)
        new = adam_step(st, p, np.zeros(3))
        np.testing.assert_array_equal(new, p)
        assert st.step == 1

    def test_first_step_is_signed_learning_rate(self):
        p = np.zeros(4)
        st = AdamState.for_params(p, lr=0.02)
        g = np.array([0.3, -1.7, 2.2, -0.01])
        new = adam_step(st, p, g)
        np.testing.assert_allclose(new, -0.02 * np.sign(g), atol=1e-6)

    def test_deterministic_across_runs(self):
        rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
        results = []
        for rng in (rng_a, rng_b):
            p = np.zeros(6)
            st = AdamState.for_params(p, lr=1e-3)
            for _ in range(25):
                p = adam_step(st, p, rng.normal(size=6))
            results.append(p)
        np.testing.assert_array_equal(results[0], results[1])

    def test_non_finite_gradient_aborts(self):
        p = np.zeros(2)
        st = AdamState.for_params(p, lr=1e-3)
        with pytest.raises(DivergenceError):
            adam_step(st, p, np.array([1.0, np.nan]))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = ScoreNet(3, 3, hidden=(9, 7), seed=8, normalize_target=True)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        loaded = load_checkpoint(path)
        assert loaded.layer_sizes == net.layer_sizes
        assert loaded.n_out == net.n_out
        assert loaded.normalize_target is True
        np.testing.assert_array_equal(loaded.params, net.params)
        x = np.random.default_rng(0).normal(size=(2, 3))
        np.testing.assert_array_equal(loaded.forward(x, 0.4), net.forward(x, 0.4))

    def test_corrupt_length_rejected(self, tmp_path):
        net = ScoreNet(2, 1, hidden=(4,), seed=0)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestInitialization:
    def test_fan_in_scaling(self):
        net = ScoreNet(3, 1, hidden=(100,), seed=0)
        w1 = net.params[: 4 * 100].reshape(4, 100)
        bound = 1.0 / np.sqrt(4)
        assert np.abs(w1).max() <= bound
        # uniform on [-b, b] has std b/sqrt(3)
        assert np.std(w1) == pytest.approx(bound / np.sqrt(3), rel=0.1)

    def test_reseeding_reproduces(self):
        a = ScoreNet(2, 1, seed=1234)
        b = ScoreNet(2, 1, seed=1234)
        np.testing.assert_array_equal(a.params, b.params)
        assert not np.array_equal(a.params, ScoreNet(2, 1, seed=1235).params)
