import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as spi
from scipy.special import erf

from smlab.expfam import (
    CATALOG,
    DivergentIntegral,
    ExpFamilyModel,
    GaussianLocation,
    MollifierStat,
    TruncationError,
    bimodal_quartic,
    build_statistic,
    catalog_model,
    default_models,
    erf_prime,
    gaussian_mean,
    linear_statistic,
    log_partition,
    mollifier_cut_stat,
    moments,
)
from smlab.numerics import Grid1D, QuadratureRule, RngStream


def _fd_points(model, k=100, seed=0):
    lo, hi = model.domain.lo, model.domain.hi
    span = hi - lo
    return np.random.default_rng(seed).uniform(lo + 0.2 * span, hi - 0.2 * span, k)


STAT_CASES = [
    ("bimodal_quartic", {"a": 2.0}),
    ("bimodal_with_cut", {"a": 3.0}),
    ("bimodal_nocut", {"a": 3.0}),
    ("gaussian_mixture", {"a": 2.0}),
    ("gaussian_mean", {"d": 1}),
    ("oscillating", {"omega": 4.0}),
    ("bimodal_quartic_cut", {"a": 3.0, "gamma": 0.5}),
]


class TestStatistics:
    @pytest.mark.parametrize("name,params", STAT_CASES)
    def test_jacobian_matches_finite_differences(self, name, params):
        stat = build_statistic(name, **params)
        x = np.random.default_rng(1).uniform(-3, 3, 100)
        h = 1e-6
        fd = (stat.eval(x + h) - stat.eval(x - h)) / (2 * h)
        np.testing.assert_allclose(stat.jac(x), fd, rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("name,params", STAT_CASES)
    def test_laplacian_matches_second_differences(self, name, params):
        stat = build_statistic(name, **params)
        x = np.random.default_rng(2).uniform(-3, 3, 100)
        h = 1e-4
        fd = (stat.eval(x + h) - 2 * stat.eval(x) + stat.eval(x - h)) / h**2
        np.testing.assert_allclose(stat.lap(x), fd, rtol=1e-4, atol=1e-4)

    def test_bimodal_quartic_formula(self):
        x = np.array([0.0, 1.0, 2.0])
        a = 2.0
        expect = -(x**4) / (8 * a * a) + x**2 / 4 - a * a / 8
        np.testing.assert_allclose(bimodal_quartic(a).eval(x)[:, 0], expect)

    def test_bimodal_quartic_zero_at_modes(self):
        assert bimodal_quartic(3.0).eval(np.array([3.0, -3.0]))[:, 0] == pytest.approx([0.0, 0.0])

    def test_erf_derivative(self):
        x = np.linspace(-3, 3, 61)
        h = 1e-6
        np.testing.assert_allclose(erf_prime(x), (erf(x + h) - erf(x - h)) / (2 * h), atol=1e-6)

    def test_catalog_contents(self):
        for name in ("bimodal_quartic", "bimodal_with_cut", "gaussian_mean", "oscillating"):
            assert name in CATALOG
        assert build_statistic("mollifier_cut", gamma=0.5).m == 1

    def test_unknown_statistic(self):
        with pytest.raises(KeyError):
            build_statistic("nope")


class TestMollifier:
    @pytest.mark.parametrize("gamma", [0.1, 0.5, 2.0])
    def test_psi_integrates_to_one(self, gamma):
        moll = MollifierStat(gamma)
        val, _ = spi.quad(moll.psi, -gamma, gamma, epsabs=1e-13, epsrel=1e-12)
        assert val == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("gamma", [0.25, 1.0])
    def test_derivative_bound(self, gamma):
        moll = MollifierStat(gamma)
        y = np.linspace(-gamma, gamma, 20001)
        assert np.max(np.abs(moll.dpsi(y))) <= gamma**-2 / moll.psi_norm * (1 + 1e-6)

    def test_cut_values(self):
        gamma = 0.5
        f2 = mollifier_cut_stat(gamma)
        vals = f2.eval(np.array([-2 * gamma, 0.0, 2 * gamma]))[:, 0]
        np.testing.assert_allclose(vals, [0.0, 0.5, 1.0], atol=1e-14)

    def test_cut_half_gamma_against_quadrature(self):
        gamma = 0.5
        moll = MollifierStat(gamma)
        oracle, _ = spi.quad(moll.psi, -gamma, gamma / 2, epsabs=1e-13, epsrel=1e-12)
        assert mollifier_cut_stat(gamma).eval(np.array([gamma / 2]))[0, 0] == pytest.approx(oracle, abs=1e-10)

    def test_cut_monotone(self):
        x = np.linspace(-1, 1, 2001)
        assert np.all(np.diff(mollifier_cut_stat(0.5).eval(x)[:, 0]) >= 0)

    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(ValueError):
            MollifierStat(0.0)


class TestLogPartition:
    def test_standard_normal_constant(self):
        m = catalog_model("gaussian_mean", theta=[0.0])
        assert m.logZ == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-10)

    def test_bimodal_quartic_against_trapezoid(self):
        stat = bimodal_quartic(1.0)
        x = np.linspace(-11, 11, 1_000_001)
        oracle = math.log(np.trapezoid(np.exp(stat.eval(x)[:, 0]), x))
        val = log_partition(stat, [1.0], Grid1D(-11, 11, 8192), QuadratureRule())
        assert val == pytest.approx(oracle, abs=1e-9)

    def test_uniform_case(self):
        val = log_partition(linear_statistic(), [0.0], Grid1D(0, 1, 64), QuadratureRule())
        assert val == pytest.approx(0.0, abs=1e-14)

    def test_refinement_stable(self):
        stat = bimodal_quartic(2.0)
        g = Grid1D(-12, 12, 8192)
        a = log_partition(stat, [1.0], g, QuadratureRule())
        b = log_partition(stat, [1.0], g.refined(), QuadratureRule())
        assert abs(a - b) <= 1e-8 * max(1, abs(a))

    def test_divergent(self):
        with pytest.raises(DivergentIntegral):
            log_partition(bimodal_quartic(2.0), [-1.0], Grid1D(-12, 12, 256), QuadratureRule())

    def test_truncation_error(self):
        with pytest.raises(TruncationError):
            ExpFamilyModel(linear_statistic(), [0.0], Grid1D(0, 1, 64))


class TestModel:
    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_normalized(self, name):
        m = catalog_model(name)
        x = np.linspace(m.domain.lo, m.domain.hi, 400_001)
        assert np.trapezoid(m.density(x), x) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_consistency_identity(self, name):
        assert np.max(np.abs(catalog_model(name).consistency_residual())) < 1e-6

    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_cdf_table(self, name):
        t = catalog_model(name).cdf_table
        assert t[0] == 0.0 and t[-1] == 1.0
        assert np.all(np.diff(t) >= 0)

    def test_gaussian_moments(self):
        mo = moments(catalog_model("gaussian_mean", theta=[0.0]))
        np.testing.assert_allclose(mo.mean_F, [0.0], atol=1e-12)
        np.testing.assert_allclose(mo.cov_F, [[1.0]], atol=1e-10)
        np.testing.assert_allclose(mo.a_matrix, [[1.0]], atol=1e-12)
        np.testing.assert_allclose(mo.mean_lapF, [0.0], atol=1e-12)

    def test_bimodal_quartic_cov_against_fine_grid(self):
        m = catalog_model("bimodal_quartic", a=2.0)
        x = np.linspace(-12, 12, 1_000_001)
        f = bimodal_quartic(2.0).eval(x)[:, 0]
        p = np.exp(f)
        p /= np.trapezoid(p, x)
        mean = np.trapezoid(p * f, x)
        var = np.trapezoid(p * (f - mean) ** 2, x)
        assert moments(m).cov_F[0, 0] == pytest.approx(var, rel=1e-8)

    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_moment_matrices_psd(self, name):
        mo = moments(catalog_model(name))
        for mat in (mo.cov_F, mo.a_matrix, mo.cov_drift):
            np.testing.assert_allclose(mat, mat.T, atol=1e-12)
            assert np.linalg.eigvalsh(mat)[0] >= -1e-9 * max(1, np.abs(mat).max())

    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_score_identity(self, name):
        m = catalog_model(name)
        x = _fd_points(m)
        h = 1e-5
        fd = (m.log_density(x + h) - m.log_density(x - h)) / (2 * h)
        np.testing.assert_allclose(m.score(x), fd, rtol=1e-5, atol=1e-5)

    @pytest.mark.parametrize("mu", [-1.5, 0.0, 2.0])
    def test_gaussian_mode_at_mean(self, mu):
        m = catalog_model("gaussian_mean", theta=[mu])
        x = m.domain.nodes
        assert abs(x[np.argmax(m.density(x))] - mu) <= m.domain.h

    @pytest.mark.parametrize("name", ["bimodal_quartic", "bimodal_with_cut", "bimodal_nocut", "gaussian_mixture"])
    def test_even_density_odd_moments(self, name):
        m = catalog_model(name)
        assert abs(m.expect(lambda x: x**3)) < 1e-8
        assert abs(m.expect(lambda x: x)) < 1e-8

    def test_default_models_one_per_family(self):
        assert len(default_models()) == len(CATALOG)

    def test_immutable_theta(self):
        m = catalog_model("bimodal_quartic")
        with pytest.raises(ValueError):
            m.theta[0] = 3.0


class TestSampling:
    def test_gaussian_mean(self):
        m = catalog_model("gaussian_mean", theta=[0.0])
        x = m.sample(RngStream(42, 0), 100_000)
        assert abs(x.mean()) <= 0.02

    def test_bimodal_balance(self):
        x = catalog_model("bimodal_quartic", a=4.0).sample(RngStream(42, 1), 100_000)
        assert 0.48 <= np.mean(x > 0) <= 0.52

    def test_empty(self):
        assert catalog_model("gaussian_mean").sample(RngStream(1), 0).shape == (0,)

    @pytest.mark.parametrize("name", ["bimodal_quartic", "oscillating", "gaussian_mixture"])
    def test_kolmogorov_smirnov(self, name):
        m = catalog_model(name)
        n = 100_000
        x = np.sort(m.sample(RngStream(7, 2), n))
        cdf = m.cdf(x)
        ks = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
        assert ks < 2 / math.sqrt(n)

    def test_deterministic(self):
        m = catalog_model("bimodal_quartic")
        np.testing.assert_array_equal(m.sample(RngStream(3, 4), 50), m.sample(RngStream(3, 4), 50))


class TestGaussianLocation:
    def test_gammas(self):
        g = GaussianLocation(np.zeros(3))
        np.testing.assert_array_equal(g.gamma_sm(), np.eye(3))
        np.testing.assert_array_equal(g.gamma_mle(), np.eye(3))

    def test_kl(self):
        assert GaussianLocation.kl([1.0, 0.0], [0.0, 2.0]) == pytest.approx(2.5)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.1, 3))
    def test_quadrature_family_matches_closed_form(self, mu, shift):
        # N(mu, 1) via gaussian_mean quadrature: mean mu, variance 1
        m = ExpFamilyModel(gaussian_mean(), [mu], Grid1D(-15, 15, 2048))
        assert m.expect(lambda x: x) == pytest.approx(mu, abs=1e-9)
        assert m.expect(lambda x: (x - mu) ** 2) == pytest.approx(1.0, abs=1e-9)
        assert m.logZ == pytest.approx(0.5 * math.log(2 * math.pi) + 0.5 * mu * mu, abs=1e-9)
