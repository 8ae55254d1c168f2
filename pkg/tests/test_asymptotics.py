import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as spi
from scipy.special import erf

from smlab.asymptotics import (
    asymptotic_report,
    cut_diagnostics,
    gamma_mle,
    gamma_sm,
    lemma47_check,
    statistic_pencil_max,
    lemma48_check,
    poincare_bound_check,
    poincare_bound_rhs,
    relative_efficiency,
    restricted_poincare,
    sandwich_from_factors,
    sandwich_monte_carlo,
    smoothness_terms,
)
from smlab.expfam import CATALOG, ExpFamilyModel, catalog_model, linear_statistic, moments
from smlab.numerics import Grid1D, NotPositiveDefinite, RngStream


def _spd(rng, n):
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


class TestGammaMLE:
    def test_gaussian(self):
        np.testing.assert_allclose(gamma_mle(catalog_model("gaussian_mean", theta=[0.0])), [[1.0]], atol=1e-10)

    def test_bimodal_with_cut_against_quad(self):
        a = 3.0
        m = catalog_model("bimodal_with_cut", a=a)
        g = lambda x: x**2 - x**4 / (2 * a * a)
        lo, hi = m.domain.lo, m.domain.hi
        q = lambda f: spi.quad(lambda x: f(x) * np.exp(g(x)), lo, hi, points=[-a, 0, a], limit=400, epsabs=0, epsrel=1e-13)[0]
        z = q(lambda x: 1.0)
        fs = [g, lambda x: g(x) + erf(x)]
        mu = [q(f) / z for f in fs]
        cov = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                cov[i, j] = q(lambda x: (fs[i](x) - mu[i]) * (fs[j](x) - mu[j])) / z
        np.testing.assert_allclose(gamma_mle(m), np.linalg.inv(cov), rtol=1e-7)

    def test_singular(self):
        # duplicated statistic: Cov(F) is singular
        m = catalog_model("bimodal_with_cut", a=3.0)
        stat = m.stat.__class__(
            name="dup", m=2, eval=lambda x: np.repeat(m.stat.eval(x)[:, :1], 2, axis=1),
            jac=lambda x: np.repeat(m.stat.jac(x)[:, :1], 2, axis=1),
            lap=lambda x: np.repeat(m.stat.lap(x)[:, :1], 2, axis=1),
        )
        with pytest.raises(NotPositiveDefinite):
            gamma_mle(ExpFamilyModel(stat, [0.5, 0.5], m.domain))


class TestGammaSM:
    def test_gaussian_location(self):
        # the estimator is the sample mean, whose variance is 1
        np.testing.assert_allclose(gamma_sm(catalog_model("gaussian_mean", theta=[0.4])), [[1.0]], atol=1e-10)

    def test_zero_drift(self):
        # F = x, no base, theta = 0: drift is identically zero
        m = ExpFamilyModel(linear_statistic(), [0.0], Grid1D(0, 1, 64), check_truncation=False)
        assert np.all(moments(m).cov_drift == 0.0)
        assert np.all(gamma_sm(m) == 0.0)

    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_psd_symmetric(self, name):
        m = catalog_model(name)
        for g in (gamma_sm(m), gamma_mle(m)):
            np.testing.assert_allclose(g, g.T, atol=1e-8 * np.abs(g).max())
            assert np.linalg.eigvalsh(g)[0] >= -1e-8 * np.abs(g).max()

    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_monte_carlo_sandwich(self, name):
        m = catalog_model(name)
        g = gamma_sm(m)
        mc = sandwich_monte_carlo(m, RngStream(42, 9), 1_000_000)
        assert np.linalg.norm(mc - g) <= 0.05 * np.linalg.norm(g)

    def test_factor_sandwich_matches_assembled(self):
        rng = np.random.default_rng(3)
        a, s = _spd(rng, 3), _spd(rng, 3)
        rj, rd = np.linalg.cholesky(a).T, np.linalg.cholesky(s).T
        ainv = np.linalg.inv(a)
        np.testing.assert_allclose(sandwich_from_factors(rj, rd), ainv @ s @ ainv, rtol=1e-10)


class TestEfficiency:
    def test_equal(self):
        g = _spd(np.random.default_rng(0), 3)
        assert relative_efficiency(g, g)[0] == pytest.approx(1.0, rel=1e-12)

    def test_scaled(self):
        g = _spd(np.random.default_rng(1), 3)
        assert relative_efficiency(4 * g, g)[0] == pytest.approx(4.0, rel=1e-12)

    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_report_worst_direction(self, name):
        r = asymptotic_report(catalog_model(name))
        w = r.worst_direction
        assert np.linalg.norm(w) == pytest.approx(1.0)
        assert (w @ r.gamma_sm @ w) / (w @ r.gamma_mle @ w) == pytest.approx(r.worst_ratio, rel=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_congruence_invariance(self, seed):
        rng = np.random.default_rng(seed)
        gs, gm = _spd(rng, 2), _spd(rng, 2)
        m = rng.standard_normal((2, 2)) + 2 * np.eye(2)
        assert relative_efficiency(m.T @ gs @ m, m.T @ gm @ m)[0] == pytest.approx(relative_efficiency(gs, gm)[0], rel=1e-8)

    def test_cut_family_growth(self):
        ratios = np.array([asymptotic_report(catalog_model("bimodal_with_cut", a=float(a))).worst_ratio for a in range(1, 8)])
        logs = np.log(ratios)
        assert np.all(np.diff(logs) > 0)
        assert np.all(np.diff(logs, 2) > 0)
        slope = np.polyfit(np.arange(3, 8) ** 2 / 8, logs[2:], 1)[0]
        assert slope >= 0.8


class TestPoincareBound:
    def test_gaussian(self):
        chk = poincare_bound_check(catalog_model("gaussian_mean", theta=[0.0]), 1.0)
        assert chk.lhs == pytest.approx(1.0, abs=1e-10)
        assert chk.rhs >= 2.0 and chk.holds

    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_holds_with_restricted_constant(self, name):
        m = catalog_model(name)
        assert poincare_bound_check(m, restricted_poincare(m)).holds

    def test_theta_term_scales(self):
        base = poincare_bound_rhs(1.0, 1.0, 1.0, 3.0, 0.0)
        assert poincare_bound_rhs(1.0, 1.0, 4.0, 3.0, 0.0) == pytest.approx(4 * base)

    def test_smoothness_terms_gaussian(self):
        # augmented theta (mu, 1) and JF = (1, -x)
        th2, jf4, lap2 = smoothness_terms(catalog_model("gaussian_mean", theta=[0.5]))
        assert th2 == pytest.approx(1.25)
        # E(1 + x^2)^2 with x ~ N(0.5, 1): 1 + 2 E x^2 + E x^4
        ex2 = 1 + 0.25
        ex4 = 0.5**4 + 6 * 0.25 + 3
        assert jf4 == pytest.approx(1 + 2 * ex2 + ex4, rel=1e-9)
        assert lap2 == pytest.approx(0.0, abs=1e-14)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            poincare_bound_check(catalog_model("gaussian_mean"), 0.0)


class TestLemmas:
    def test_restricted_gaussian(self):
        m = catalog_model("gaussian_mean", theta=[0.0])
        assert statistic_pencil_max(m) == pytest.approx(1.0, abs=1e-10)
        assert restricted_poincare(m) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("name,params", [("bimodal_quartic", {"a": 2.0}), ("oscillating", {"omega": 8.0})])
    def test_restricted_equals_pencil(self, name, params):
        m = catalog_model(name, **params)
        c = restricted_poincare(m)
        assert statistic_pencil_max(m) == pytest.approx(c, rel=1e-8)
        assert lemma47_check(m, c)

    def test_cov_sum_random(self):
        flag, worst = lemma48_check(RngStream(42, 0))
        assert flag and worst >= -1e-10

    def test_cov_sum_extremes(self):
        a = np.random.default_rng(0).standard_normal((1000, 3))
        cov = lambda x: np.cov(x.T, bias=True)
        # B = -A and B = A
        assert np.linalg.eigvalsh(4 * cov(a) - cov(a - a))[0] >= 0
        np.testing.assert_allclose(cov(2 * a), 2 * cov(a) + 2 * cov(a), atol=1e-12)


class TestCutDiagnostics:
    @pytest.mark.parametrize("a", [2.0, 4.0])
    def test_even_family(self, a):
        d = cut_diagnostics(catalog_model("bimodal_quartic", a=a))
        assert d.delta1 == pytest.approx(1.0, abs=1e-8)
        assert d.prob_S == pytest.approx(0.5, abs=1e-10)
        assert d.var_cut == pytest.approx(d.prob_S * (1 - d.prob_S), abs=1e-12)

    def test_erf_component(self):
        d = cut_diagnostics(catalog_model("bimodal_with_cut", a=3.0))
        assert 0.0 <= d.delta1 < 1.0
        assert np.abs(d.cov_cut).max() > 1e-3

    def test_surface_mass(self):
        m = catalog_model("gaussian_mean", theta=[0.0])
        assert cut_diagnostics(m).surface_mass == pytest.approx(1 / np.sqrt(2 * np.pi), rel=1e-10)
