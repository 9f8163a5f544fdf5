import json
import math
from dataclasses import replace

import numpy as np
import pytest

from xrmdn.data import SyntheticConfig, gen_synthetic
from xrmdn.errors import ConfigError, DataError, TrainingDivergedError
from xrmdn.mathkernel import ActivationConfig, gmm_log_pdf, make_rng
from xrmdn.model import RecurrentState, XrmdnModel, init_model, initial_state, rollout
from xrmdn.training import (
    AdamState,
    TrainConfig,
    adam_update,
    clip_by_global_norm,
    fit,
    grad_nll,
    nll,
    nll_and_grad,
    prepare_series,
    train,
    window_inputs,
)

from test_model import GOLDEN_INPUTS, GOLDEN_OBSERVED, GOLDEN_STATE, golden_model

# mpmath (50 digits) value of the golden model's 3-step negative log-likelihood
GOLDEN_NLL = 4.1865355725103190196


def random_problem(rng, n=2, k=3, w=3, t=5):
    m = init_model(n, k, w, rng)
    m = m.with_vector(rng.normal(0, 0.5, m.n_params))
    state = RecurrentState(rng.dirichlet(np.ones(n)), rng.normal(0, 1, n), rng.uniform(0.2, 2, n),
                           float(rng.uniform(0, 1)))
    return m, rng.normal(0, 1, (t, w)), rng.normal(0, 1, t), state


def fd_relative_error(model, inputs, observed, state, h=1e-5):
    analytic = grad_nll(model, inputs, observed, state).to_vector()
    theta = model.to_vector()
    numeric = np.empty_like(theta)
    for j in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        numeric[j] = (nll(model.with_vector(up), inputs, observed, state)
                      - nll(model.with_vector(dn), inputs, observed, state)) / (2 * h)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / scale))


def small_dataset(length=300, seed=0):
    return gen_synthetic(SyntheticConfig(length=length, seed=seed))


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.n_components, cfg.n_units, cfg.learning_rate) == (50, 2, 8, 1e-3)
        assert cfg.batch_len == cfg.lookback_k == 144
        assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)

    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_len=0), dict(learning_rate=0.0),
                                    dict(learning_rate=float("nan")), dict(grad_clip=-1.0),
                                    dict(update_per="step"), dict(adam_beta1=1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_activation_from_dict(self):
        assert TrainConfig(activation={"xi": 1e-3}).activation == ActivationConfig(xi=1e-3)


class TestNll:
    def test_golden_value(self):
        loss = nll(golden_model(), GOLDEN_INPUTS, GOLDEN_OBSERVED, GOLDEN_STATE)
        assert loss == pytest.approx(GOLDEN_NLL, abs=1e-12)

    def test_additive_over_steps(self):
        rng = np.random.default_rng(0)
        m, x, y, s = random_problem(rng, t=8)
        forecasts, _ = rollout(m, x, y, s)
        per_step = [-gmm_log_pdf(obs, f) for obs, f in zip(y, forecasts)]
        assert nll(m, x, y, s) == pytest.approx(sum(per_step), abs=1e-11)

    def test_split_windows_add_up(self):
        rng = np.random.default_rng(1)
        m, x, y, s = random_problem(rng, t=10)
        first, _, mid = nll_and_grad(m, x[:4], y[:4], s)
        assert nll(m, x, y, s) == pytest.approx(first + nll(m, x[4:], y[4:], mid), abs=1e-11)

    def test_zero_loss_construction(self):
        # mean copies the input, variance sits at 1/(2 pi): every density equals 1
        sigma2 = 1.0 / (2.0 * math.pi)
        act = ActivationConfig(xi=1e-6)
        zero = init_model(1, 2, 1, make_rng(0)).zeros_like()
        mrnn = zero.mrnn.copy()
        mrnn.in_w[0, 0] = 1.0
        mrnn.mix_w[0, 0] = 1.0
        vrnn = zero.vrnn.copy()
        vrnn.mix_b[0] = math.log(sigma2 - act.xi)
        m = XrmdnModel(zero.wrnn, mrnn, vrnn, act)
        y = np.array([0.3, -1.2, 2.5, 0.0])
        assert abs(nll(m, y[:, None], y, initial_state(1, 0.0, 1.0))) < 1e-12

    def test_finite_for_extreme_parameters(self):
        rng = np.random.default_rng(2)
        m, x, y, s = random_problem(rng)
        m = m.with_vector(rng.normal(0, 20, m.n_params))
        assert math.isfinite(nll(m, x * 50, y * 50, s))

    def test_window_errors(self):
        m = golden_model()
        with pytest.raises(DataError):
            nll(m, GOLDEN_INPUTS, GOLDEN_OBSERVED[:2], GOLDEN_STATE)
        with pytest.raises(ConfigError):
            nll(m, np.zeros((3, 4)), GOLDEN_OBSERVED, GOLDEN_STATE)


class TestGradient:
    def test_finite_differences(self):
        rng = np.random.default_rng(42)
        worst = max(fd_relative_error(*random_problem(rng)) for _ in range(20))
        assert worst < 1e-4

    def test_finite_differences_single_component(self):
        rng = np.random.default_rng(7)
        assert fd_relative_error(*random_problem(rng, n=1, k=2, w=2, t=6)) < 1e-4

    def test_finite_differences_golden(self):
        assert fd_relative_error(golden_model(), GOLDEN_INPUTS, GOLDEN_OBSERVED, GOLDEN_STATE) < 1e-4

    def test_dead_variance_path(self):
        rng = np.random.default_rng(3)
        m, x, y, s = random_problem(rng)
        m.vrnn.mix_w[:] = 0.0
        g = grad_nll(m, x, y, s).vrnn
        for name in ("in_w", "in_b", "rec_w", "rec_b"):
            np.testing.assert_array_equal(getattr(g, name), 0.0)
        assert np.any(g.mix_w != 0)

    @pytest.mark.parametrize("mu_target", [2.0, -1.5])
    def test_single_gaussian_mean_derivative(self, mu_target):
        # N=1 with zero weights except the mean bias and a unit-variance bias
        act = ActivationConfig()
        m = init_model(1, 2, 1, make_rng(0)).zeros_like()
        m.mrnn.mix_b[0] = 0.7
        m.vrnn.mix_b[0] = math.log1p(-act.xi)
        d = mu_target
        g = grad_nll(m, np.zeros((1, 1)), np.array([d]), initial_state(1, 0.0, 1.0))
        variance = 1.0 + act.xi + math.expm1(m.vrnn.mix_b[0])
        assert g.mrnn.mix_b[0] == pytest.approx((0.7 - d) / variance, abs=1e-12)
        # a descent step moves the mean toward the observation
        assert np.sign(-g.mrnn.mix_b[0]) == -np.sign(0.7 - d)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        m, x, y, s = random_problem(rng)
        g1 = grad_nll(m, x, y, s).to_vector()
        g2 = grad_nll(m, x, y, s).to_vector()
        np.testing.assert_array_equal(g1, g2)

    def test_clip(self):
        g = np.array([3.0, 4.0])
        np.testing.assert_allclose(clip_by_global_norm(g, 1.0), [0.6, 0.8])
        np.testing.assert_array_equal(clip_by_global_norm(g, 10.0), g)
        np.testing.assert_array_equal(clip_by_global_norm(g, None), g)


class TestAdam:
    def test_zero_gradient(self):
        m = init_model(2, 3, 2, make_rng(0))
        new, state = adam_update(m, m.zeros_like(), AdamState.zeros(m.n_params), TrainConfig())
        np.testing.assert_array_equal(new.to_vector(), m.to_vector())
        assert state.step == 1

    def test_degenerate_betas(self):
        m = init_model(2, 3, 2, make_rng(1))
        g = np.random.default_rng(1).normal(0, 2, m.n_params)
        cfg = TrainConfig(learning_rate=0.01, adam_beta1=0.0, adam_beta2=0.0, grad_clip=None)
        new, _ = adam_update(m, g, AdamState.zeros(m.n_params), cfg)
        expected = m.to_vector() - 0.01 * g / (np.abs(g) + cfg.adam_eps)
        np.testing.assert_allclose(new.to_vector(), expected, rtol=0, atol=1e-15)

    def test_bias_corrected_first_step(self):
        # with default betas the first step has magnitude lr in every coordinate
        m = init_model(1, 2, 1, make_rng(2))
        g = np.linspace(-3, 3, m.n_params) + 0.01
        new, st = adam_update(m, g, AdamState.zeros(m.n_params), TrainConfig(grad_clip=None))
        np.testing.assert_allclose(np.abs(new.to_vector() - m.to_vector()), 1e-3, rtol=1e-6)
        np.testing.assert_allclose(st.m, 0.1 * g)

    def test_deterministic(self):
        m = init_model(2, 3, 2, make_rng(3))
        g = np.random.default_rng(3).normal(size=m.n_params)
        a = adam_update(m, g, AdamState.zeros(m.n_params), TrainConfig())
        b = adam_update(m, g, AdamState.zeros(m.n_params), TrainConfig())
        np.testing.assert_array_equal(a[0].to_vector(), b[0].to_vector())
        np.testing.assert_array_equal(a[1].v, b[1].v)

    def test_shape_mismatch(self):
        m = init_model(2, 3, 2, make_rng(0))
        with pytest.raises(ConfigError):
            adam_update(m, np.zeros(3), AdamState.zeros(m.n_params), TrainConfig())
        with pytest.raises(ConfigError):
            adam_update(m, m.zeros_like(), AdamState.zeros(5), TrainConfig())


class TestPrepare:
    def test_window_inputs_order(self):
        rows = np.arange(12.0).reshape(6, 2)
        out = window_inputs(rows, 3)
        assert out.shape == (4, 6)
        np.testing.assert_array_equal(out[0], [0, 1, 2, 3, 4, 5])
        np.testing.assert_array_equal(out[-1], rows[3:].ravel())

    def test_alignment(self):
        d = small_dataset(50)
        x, y, init, (mean, std), last = prepare_series(d, 2)
        dn = (d.demand - mean) / std
        np.testing.assert_allclose(x[:, 0], dn[:-1])
        np.testing.assert_allclose(y, dn[1:])
        np.testing.assert_allclose(last, np.concatenate([[dn[-1]], d.features[-1]]))
        np.testing.assert_array_equal(init.eta_prev, [0.5, 0.5])
        assert init.mu_prev[0] == pytest.approx(0.0, abs=1e-12)
        assert init.sigma2_prev[0] == pytest.approx(1.0, abs=1e-12)
        assert init.resid_prev == 0.0

    def test_windowed(self):
        d = small_dataset(50)
        x, y, _, _, last = prepare_series(d, 2, window=4)
        assert x.shape == (46, 12) and y.shape == (46,)
        np.testing.assert_array_equal(x[1, :9], x[0, 3:])
        assert last.shape == (12,)

    def test_too_short(self):
        with pytest.raises(DataError):
            train(small_dataset(20), TrainConfig(lookback_k=24, epochs=1))


class TestTrain:
    def test_constant_series(self):
        d = small_dataset(300)
        d = replace(d, demand=np.full(len(d), 50.0))
        m, r = train(d, TrainConfig(lookback_k=24, seed=0))
        assert r.final_nll < r.initial_nll
        _, _, init, _, _ = prepare_series(d, 2)
        x, y, _, _, _ = prepare_series(d, 2)
        forecasts, _ = rollout(m, x, y, init)
        expected = np.array([f.mean() for f in forecasts]) * r.norm_std + r.norm_mean
        np.testing.assert_allclose(expected, 50.0, rtol=0.01)

    def test_progress(self):
        m, r = train(small_dataset(600, seed=3), TrainConfig(lookback_k=48, epochs=15, seed=3))
        assert len(r.epoch_nll) == r.epochs_run == 15
        assert r.epoch_nll[-1] < r.epoch_nll[0]
        assert r.final_nll < r.initial_nll
        assert all(math.isfinite(v) for v in r.epoch_nll)

    def test_deterministic(self):
        d = small_dataset(200)
        cfg = TrainConfig(lookback_k=24, epochs=3, seed=5)
        a, ra = train(d, cfg)
        b, rb = train(d, cfg)
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())
        assert ra.epoch_nll == rb.epoch_nll

    def test_batch_boundaries(self):
        d = small_dataset(201)
        x, y, init, _, _ = prepare_series(d, 2)
        m0 = init_model(2, 4, x.shape[1], make_rng(0))
        one, r1 = fit(m0, x, y, init, TrainConfig(epochs=1, batch_len=200, lookback_k=200))
        two, r2 = fit(m0, x, y, init, TrainConfig(epochs=1, batch_len=100, lookback_k=100))
        # one batch: a single step on the full gradient
        g = grad_nll(m0, x, y, init)
        single, _ = adam_update(m0, g, AdamState.zeros(m0.n_params), TrainConfig())
        np.testing.assert_array_equal(one.to_vector(), single.to_vector())
        # two batches: the second gradient starts from the carried state of the first
        _, g1, mid = nll_and_grad(m0, x[:100], y[:100], init)
        step1, adam = adam_update(m0, g1, AdamState.zeros(m0.n_params), TrainConfig())
        g2 = grad_nll(step1, x[100:], y[100:], mid)
        step2, _ = adam_update(step1, g2, adam, TrainConfig())
        np.testing.assert_array_equal(two.to_vector(), step2.to_vector())
        assert math.isfinite(r1.final_nll) and math.isfinite(r2.final_nll)

    def test_epoch_updates(self):
        d = small_dataset(201)
        x, y, init, _, _ = prepare_series(d, 2)
        m0 = init_model(2, 4, x.shape[1], make_rng(0))
        cfg = TrainConfig(epochs=1, batch_len=100, lookback_k=100, update_per="epoch")
        got, _ = fit(m0, x, y, init, cfg)
        _, g1, mid = nll_and_grad(m0, x[:100], y[:100], init)
        g2 = grad_nll(m0, x[100:], y[100:], mid)
        want, _ = adam_update(m0, g1.to_vector() + g2.to_vector(), AdamState.zeros(m0.n_params), cfg)
        np.testing.assert_array_equal(got.to_vector(), want.to_vector())

    def test_warm_up_state_rolls_final_batch(self):
        d = small_dataset(201)
        x, y, init, _, _ = prepare_series(d, 2)
        m0 = init_model(2, 4, x.shape[1], make_rng(0))
        cfg = TrainConfig(epochs=1, batch_len=120, lookback_k=120)
        trained, report = fit(m0, x, y, init, cfg)
        # the carried state entering the last batch comes from the pre-update weights
        _, _, entering = nll_and_grad(m0, x[:120], y[:120], init)
        _, want = rollout(trained, x[120:], y[120:], entering)
        np.testing.assert_array_equal(report.final_state.mu_prev, want.mu_prev)
        assert report.final_state.resid_prev == want.resid_prev

    def test_divergence(self):
        with pytest.raises(TrainingDivergedError) as info:
            train(small_dataset(300), TrainConfig(lookback_k=24, epochs=5, learning_rate=1e3))
        assert info.value.exit_code == 4
        assert "epoch 1" in str(info.value)

    def test_early_stopping(self):
        cfg = TrainConfig(lookback_k=24, epochs=40, early_stopping_patience=1, learning_rate=0.05)
        _, r = train(small_dataset(300), cfg)
        assert 1 <= r.epochs_run <= 40

    def test_report_json(self):
        _, r = train(small_dataset(120), TrainConfig(lookback_k=24, epochs=2))
        doc = json.loads(r.to_json())
        assert len(doc["epoch_nll"]) == 2
        assert doc["improvement"] == pytest.approx(r.improvement)
