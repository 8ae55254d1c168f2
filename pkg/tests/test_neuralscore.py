import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from smlab.expfam import catalog_model
from smlab.neuralscore import (
    DivergedLoss,
    ScoreNet1D,
    TrainConfig,
    density_csv,
    mode_score_error,
    mode_weight_ratio,
    reconstruct_density,
    sm_loss_and_grad,
    train,
    trapezoid_weights,
    tv_distance,
)
from smlab.numerics import Grid1D, RngStream


def _random_net(seed, width=4):
    rng = np.random.default_rng(seed)
    return ScoreNet1D(rng.standard_normal(width), rng.standard_normal(width), rng.standard_normal(width), float(rng.standard_normal()))


def _linear_net(slope=-1.0, shift=0.0):
    # with b = 0 the hidden unit adds the constant shift * tanh(20), equal to shift in floating point
    return ScoreNet1D(np.array([shift]), np.array([0.0]), np.array([20.0]), slope)


def _flatten(net):
    return np.concatenate([net.a, net.b, net.c, [net.skip]])


def _unflatten(v, k):
    return ScoreNet1D(v[:k].copy(), v[k : 2 * k].copy(), v[2 * k : 3 * k].copy(), float(v[-1]))


class TestNet:
    def test_derivatives(self):
        net = _random_net(0)
        x = np.random.default_rng(1).uniform(-3, 3, 50)
        h = 1e-5
        np.testing.assert_allclose(net.deriv(x), (net(x + h) - net(x - h)) / (2 * h), rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(net.deriv2(x), (net.deriv(x + h) - net.deriv(x - h)) / (2 * h), rtol=1e-6, atol=1e-7)

    def test_finite_on_large_inputs(self):
        net = _random_net(2)
        x = np.array([-1e6, 1e6])
        assert np.all(np.isfinite(net(x))) and np.all(np.isfinite(net.deriv(x))) and np.all(np.isfinite(net.deriv2(x)))

    def test_json_roundtrip(self):
        net = _random_net(3)
        back = ScoreNet1D.from_json(net.to_json())
        np.testing.assert_array_equal(_flatten(back), _flatten(net))
        assert set(json.loads(net.to_json())) == {"a", "b", "c", "skip"}

    def test_init_reproducible(self):
        a = ScoreNet1D.init(16, RngStream(5))
        b = ScoreNet1D.init(16, RngStream(5))
        np.testing.assert_array_equal(_flatten(a), _flatten(b))
        assert np.all(a.a == 0) and a.skip == -0.1
        assert np.max(np.abs(a.b)) <= 1.0


class TestLoss:
    def test_zero_net(self):
        z = np.zeros(3)
        loss, g = sm_loss_and_grad(ScoreNet1D(z, z, z, 0.0), np.linspace(-1, 1, 7))
        assert loss == 0.0
        assert g.skip == pytest.approx(1.0)

    def test_true_gaussian_score(self):
        x = RngStream(6).generator().standard_normal(200_000)
        loss, _ = sm_loss_and_grad(_linear_net(), x)
        assert loss == pytest.approx(-0.5, abs=0.01)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            sm_loss_and_grad(_random_net(0), [])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_gradient_matches_finite_differences(self, seed):
        net = _random_net(seed)
        x = np.random.default_rng(seed + 1).uniform(-2, 2, 20)
        _, g = sm_loss_and_grad(net, x)
        analytic = np.concatenate([g.a, g.b, g.c, [g.skip]])
        v = _flatten(net)
        h = 1e-6
        fd = np.empty_like(v)
        for i in range(len(v)):
            e = np.zeros_like(v)
            e[i] = h
            fd[i] = (sm_loss_and_grad(_unflatten(v + e, 4), x)[0] - sm_loss_and_grad(_unflatten(v - e, 4), x)[0]) / (2 * h)
        scale = max(1.0, np.abs(fd).max())
        assert np.max(np.abs(analytic - fd)) < 1e-4 * scale


class TestTraining:
    def test_gaussian_target(self):
        m = catalog_model("gaussian_mean", theta=[0.0])
        hist = []
        net = train(m, TrainConfig(width=64, steps=5000, seed=3), hist)
        assert m.expect(lambda x: (net(x) + x) ** 2) < 0.05
        tail = np.asarray(hist[-500:])
        assert np.median(np.diff(tail)) <= 0

    def test_deterministic(self):
        m = catalog_model("gaussian_mean", theta=[0.0])
        cfg = TrainConfig(width=8, steps=200, seed=1)
        np.testing.assert_array_equal(_flatten(train(m, cfg)), _flatten(train(m, cfg)))

    def test_divergence(self):
        m = catalog_model("gaussian_mean", theta=[0.0])
        with pytest.raises(DivergedLoss):
            train(m, TrainConfig(width=8, steps=2000, step_size=50.0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(width=0)

    def test_close_modes(self):
        m = catalog_model("gaussian_mixture", a=2.0)
        net = train(m, TrainConfig(seed=0))
        g = m.domain
        truth = m.density(np.asarray(g.nodes))
        truth = truth / (trapezoid_weights(g) @ truth)
        assert tv_distance(g, reconstruct_density(net, g), truth) < 0.1
        assert mode_score_error(net, m, 2.0) < 0.5


class TestReconstruction:
    def test_standard_normal(self):
        g = Grid1D(-12, 12, 8193)
        p = reconstruct_density(_linear_net(), g)
        x = np.asarray(g.nodes)
        inner = np.abs(x) <= 6
        assert np.max(np.abs(p[inner] - norm.pdf(x[inner]))) < 1e-6

    def test_shifted_normal(self):
        # s(x) = -(x - 1.5): skip -1 plus the constant 1.5
        g = Grid1D(-12, 12, 8193)
        p = reconstruct_density(_linear_net(-1.0, 1.5), g)
        x = np.asarray(g.nodes)
        inner = np.abs(x - 1.5) <= 6
        assert np.max(np.abs(p[inner] - norm.pdf(x[inner], loc=1.5))) < 1e-6

    def test_normalized(self):
        g = Grid1D(-8, 8, 2049)
        assert trapezoid_weights(g) @ reconstruct_density(_random_net(4), g) == pytest.approx(1.0, abs=1e-8)

    def test_recovers_score(self):
        g = Grid1D(-5, 5, 20001)
        net = _random_net(5)
        logp = np.log(reconstruct_density(net, g))
        x = np.asarray(g.nodes)
        d = (logp[2:] - logp[:-2]) / (2 * g.h)
        # central differences of the exact antiderivative carry O(h^2) error
        assert np.max(np.abs(d - net(x[1:-1]))) < 1e-6

    def test_mode_weight_symmetric(self):
        g = Grid1D(-6, 6, 1001)
        x = np.asarray(g.nodes)
        assert mode_weight_ratio(g, norm.pdf(x)) == pytest.approx(1.0, rel=1e-12)

    def test_density_csv(self):
        g = Grid1D(0, 1, 16)
        text = density_csv(g, np.ones(16))
        lines = text.splitlines()
        assert lines[0] == "x,density" and len(lines) == 17
