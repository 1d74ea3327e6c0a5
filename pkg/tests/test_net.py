import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from survdd.datagen import GenConfig, SurvivalData, generate_dataset, make_grid
from survdd.exceptions import InvalidConfigError
from survdd.losses import LOSS_KINDS, pchazard_infimum
from survdd.net import (
    MlpParams,
    TrainConfig,
    adam_init,
    adam_step,
    forward,
    load_checkpoint,
    loss_grad,
    make_task,
    mlp_init,
    param_count,
    save_checkpoint,
    spectral_norm,
    train,
    z_norm_diagnostic,
)


def small_task(kind, n=8, p=3, seed=0, m=3):
    data, truth = generate_dataset(GenConfig(n=n, p=p, s=2, seed=seed))
    grid = None if kind == "deepsurv" else make_grid(data.time, m, tail=kind == "nmtlr")
    return make_task(kind, data, grid), truth


def fd_param_grad(params, task, h=1e-6):
    theta = params.flat()
    out = np.empty_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        out[k] = (loss_grad(params.with_flat(up), task)[0].total
                  - loss_grad(params.with_flat(down), task)[0].total) / (2 * h)
    return out


class TestInit:
    def test_param_count_example(self):
        assert param_count(60, 64, 1) == 8129
        assert mlp_init(60, 64, 1, 0).n_params == 8129

    @given(st.integers(1, 40), st.integers(1, 64), st.integers(1, 25))
    def test_count_formula_and_nesting(self, p, w, q):
        assert mlp_init(p, w, q, 0).n_params == param_count(p, w, q)
        assert param_count(p, w + 1, q) > param_count(p, w, q)

    def test_zero_width(self):
        with pytest.raises(InvalidConfigError):
            mlp_init(3, 0, 1, 0)

    def test_deterministic(self):
        a, b = mlp_init(5, 7, 2, 42), mlp_init(5, 7, 2, 42)
        np.testing.assert_array_equal(a.flat(), b.flat())
        assert not np.array_equal(a.flat(), mlp_init(5, 7, 2, 43).flat())

    def test_glorot_range_and_zero_bias(self):
        P = mlp_init(10, 30, 4, 1)
        for W, b in P.layers:
            lim = math.sqrt(6 / sum(W.shape))
            assert np.abs(W).max() <= lim and not b.any()


class TestForward:
    def test_zero_weights_give_bias(self):
        P = mlp_init(3, 4, 2, 0)
        layers = [(np.zeros_like(W), np.zeros_like(b)) for W, b in P.layers]
        layers[-1] = (layers[-1][0], np.array([0.5, -1.0]))
        z, _ = forward(MlpParams(tuple(layers)), np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_array_equal(z, np.tile([0.5, -1.0], (5, 1)))

    def test_hand_network(self):
        # 2-2-2-1 net: h1 = relu(x), h2 = relu(h1), z = h2 . (1, -2) + 0.5
        I = np.eye(2)
        P = MlpParams(((I, np.zeros(2)), (I, np.zeros(2)), (np.array([[1.0], [-2.0]]), np.array([0.5]))))
        z, f = forward(P, np.array([[3.0, -1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(z[:, 0], [3.5, -2.5])
        np.testing.assert_allclose(f, [[3.0, 0.0], [1.0, 2.0]])

    def test_embedding_nonnegative(self, rng):
        _, f = forward(mlp_init(4, 16, 1, 3), rng.normal(size=(20, 4)))
        assert np.all(f >= 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(mlp_init(4, 3, 1, 0), np.zeros((2, 5)))


class TestGradients:
    @pytest.mark.parametrize("kind", LOSS_KINDS)
    def test_finite_differences(self, kind):
        task, _ = small_task(kind)
        q = 1 if kind == "deepsurv" else task.target.m
        params = mlp_init(3, 5, q, 1)
        _, grads = loss_grad(params, task)
        analytic = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
        fd = fd_param_grad(params, task)
        err = np.abs(analytic - fd).max() / np.abs(fd).max()
        assert err <= 1e-5

    def test_no_events_no_signal(self):
        data, _ = generate_dataset(GenConfig(n=8, p=3, s=2, seed=0))
        data = SurvivalData(data.X, data.time, np.zeros(8, dtype=int))
        _, grads = loss_grad(mlp_init(3, 4, 1, 0), make_task("deepsurv", data))
        assert all(not gW.any() and not gb.any() for gW, gb in grads)

    @pytest.mark.parametrize("kind", ["deepsurv", "nnet"])
    def test_bias_gradient_is_column_sum(self, kind):
        task, _ = small_task(kind)
        q = 1 if kind == "deepsurv" else task.target.m
        params = mlp_init(3, 5, q, 2)
        rep, grads = loss_grad(params, task)
        np.testing.assert_allclose(grads[-1][1], rep.grad.reshape(task.n, q).sum(axis=0), rtol=1e-12)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        P = mlp_init(3, 4, 1, 0)
        st_ = adam_init(P, lr=0.1)
        zero = tuple((np.zeros_like(W), np.zeros_like(b)) for W, b in P.layers)
        for _ in range(5):
            st_ = adam_step(st_, zero)
        np.testing.assert_array_equal(st_.params.flat(), P.flat())

    def test_first_step_closed_form(self):
        P = mlp_init(2, 3, 1, 0)
        g = tuple((np.full_like(W, 0.3), np.full_like(b, -2.0)) for W, b in P.layers)
        new = adam_step(adam_init(P, lr=0.01), g).params
        # bias-corrected first step: -lr * g / (|g| + eps)
        step = new.flat() - P.flat()
        gflat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in g])
        np.testing.assert_allclose(step, -0.01 * gflat / (np.abs(gflat) + 1e-8), rtol=1e-12)

    def test_identical_runs(self):
        task, _ = small_task("deepsurv", n=20)
        cfg = TrainConfig(lr=1e-2, batch_size=8, max_epochs=15, seed=3)
        a = train(mlp_init(3, 6, 1, 0), task, None, "deepsurv", cfg)
        b = train(mlp_init(3, 6, 1, 0), task, None, "deepsurv", cfg)
        np.testing.assert_array_equal(a.trace, b.trace)
        np.testing.assert_array_equal(a.params.flat(), b.params.flat())


class TestTrain:
    def test_separable_toy_reaches_small_loss(self):
        X = np.array([[3.0], [2.0], [1.0], [0.0]])
        data = SurvivalData(X, [1.0, 2.0, 3.0, 4.0], [1, 1, 1, 0])
        task = make_task("deepsurv", data)
        cfg = TrainConfig(lr=1e-2, max_epochs=2000, full_batch=True, seed=0)
        out = train(mlp_init(1, 8, 1, 0), task, None, "deepsurv", cfg)
        assert out.train_total < 0.01

    def test_zero_learning_rate_stops_on_plateau(self):
        task, _ = small_task("nnet", n=20)
        cfg = TrainConfig(lr=0.0, batch_size=8, max_epochs=500, window=5, seed=0)
        out = train(mlp_init(3, 4, task.target.m, 0), task, None, "nnet", cfg)
        assert np.all(out.trace == out.trace[0])
        assert out.converged_epoch == cfg.window  # trace[0] is the pre-training loss

    def test_pchazard_respects_infimum(self):
        task, _ = small_task("pchazard", n=30, m=4)
        cfg = TrainConfig(lr=1e-2, max_epochs=400, full_batch=True, seed=0)
        out = train(mlp_init(3, 16, 4, 0), task, None, "pchazard", cfg)
        assert out.train_total >= pchazard_infimum(task.target) - 1e-9

    def test_best_on_trace_is_returned(self):
        task, _ = small_task("nmtlr", n=40, m=4)
        cfg = TrainConfig(lr=3e-2, batch_size=8, max_epochs=60, seed=1)
        out = train(mlp_init(3, 8, 4, 0), task, None, "nmtlr", cfg)
        assert out.train_loss == pytest.approx(out.trace.min(), rel=1e-12)
        assert out.train_loss <= out.trace[-1]

    def test_divergence_is_flagged(self):
        task, _ = small_task("pchazard", n=30, m=4)
        cfg = TrainConfig(lr=1e6, batch_size=5, max_epochs=50, seed=0)
        out = train(mlp_init(3, 8, 4, 0), task, None, "pchazard", cfg)
        if out.diverged:
            assert math.isnan(out.train_loss)
        else:
            assert np.isfinite(out.train_loss)

    def test_kind_mismatch(self):
        task, _ = small_task("nnet")
        with pytest.raises(InvalidConfigError):
            train(mlp_init(3, 4, 3, 0), task, None, "deepsurv", TrainConfig())

    @pytest.mark.parametrize("kw", [dict(lr=-1.0), dict(batch_size=0), dict(rel_tol=0.0), dict(rel_tol=1.0)])
    def test_config_validation(self, kw):
        with pytest.raises(InvalidConfigError):
            TrainConfig(**kw)


class TestDiagnostics:
    def test_spectral_small_cases(self):
        assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-9)
        assert spectral_norm(np.array([[0.0, 2.0], [0.0, 0.0]])) == pytest.approx(2.0, abs=1e-9)
        assert spectral_norm(np.zeros((3, 2))) == 0.0

    @given(st.integers(0, 2**31))
    def test_spectral_vs_svd(self, seed):
        W = np.random.default_rng(seed).normal(size=(5, 4))
        s = np.linalg.svd(W, compute_uv=False)
        if s[0] - s[1] > 0.05 * s[0]:  # power iteration needs a spectral gap to hit 1e-7 in 200 steps
            assert abs(spectral_norm(W) - s[0]) <= 1e-7

    def test_spectral_row_vector(self):
        w = np.array([3.0, -4.0])
        assert spectral_norm(w) == pytest.approx(5.0)

    def test_z_norm(self, rng):
        X = rng.normal(size=(10, 3))
        P = mlp_init(3, 4, 1, 0)
        zero = MlpParams(tuple((np.zeros_like(W), np.zeros_like(b)) for W, b in P.layers))
        eta = rng.normal(size=10)
        zn, en, dev = z_norm_diagnostic(zero, X, eta)
        assert zn == 0.0 and dev == pytest.approx(-np.linalg.norm(eta))
        z, _ = forward(P, X)
        assert z_norm_diagnostic(P, X, z[:, 0])[2] == 0.0

    def test_z_norm_needs_single_output(self, rng):
        with pytest.raises(InvalidConfigError):
            z_norm_diagnostic(mlp_init(3, 4, 2, 0), rng.normal(size=(4, 3)), np.zeros(4))

    def test_checkpoint_round_trip(self, tmp_path):
        P = mlp_init(4, 6, 3, 9)
        save_checkpoint(P, tmp_path / "c.json")
        Q = load_checkpoint(tmp_path / "c.json")
        for (W1, b1), (W2, b2) in zip(P.layers, Q.layers):
            np.testing.assert_array_equal(W1, W2)
            np.testing.assert_array_equal(b1, b2)

    def test_checkpoint_header_checked(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"format": "other", "version": 1, "layers": []}')
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "bad.json")
