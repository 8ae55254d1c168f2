"""Asymptotic covariances of score matching and the MLE, and efficiency diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .expfam import ExpFamilyModel, moments
from .numerics import (
    Grid1D,
    NotPositiveDefinite,
    QuadratureRule,
    RngStream,
    gen_eig_max,
    op_norm,
    quadrature_nodes,
    solve_spd,
    sym_eig,
)

BOUND_SLACK = 1e-6


def _inverse_spd(a) -> np.ndarray:
    inv = solve_spd(a, np.eye(len(a)))
    return 0.5 * (inv + inv.T)


def gamma_mle(model: ExpFamilyModel) -> np.ndarray:
    """Inverse Fisher information Cov(F)^{-1}."""
    return _inverse_spd(moments(model).cov_F)


def sandwich_from_factors(r_jac, r_drift) -> np.ndarray:
    """A^{-1} S A^{-1} for A = Rj^T Rj and S = Rd^T Rd, assembled as B^T B with B = Rd A^{-1}."""
    rj = np.atleast_2d(r_jac)
    if np.min(np.abs(np.diag(rj))) <= 1e-300:
        raise NotPositiveDefinite("E[(JF)(JF)^T] is singular")
    # A^{-1} = Rj^{-1} Rj^{-T}; B^T = A^{-1} Rd^T
    bt = solve_triangular(rj, solve_triangular(rj, np.atleast_2d(r_drift).T, trans="T"))
    return bt @ bt.T


def gamma_sm(model: ExpFamilyModel) -> np.ndarray:
    """A^{-1} Cov(drift) A^{-1} with A = E[(JF)(JF)^T]."""
    mo = moments(model)
    return sandwich_from_factors(mo.r_jac, mo.r_drift)


def smoothness_terms(model: ExpFamilyModel) -> tuple[float, float, float]:
    """(||theta||^2, E||JF||_op^4, E||Laplacian F||^2).

    For families with a base measure b, b is treated as one more statistic
    whose coefficient is pinned to 1, so theta and JF are augmented with it.
    """
    x, pw = model.quadrature()
    J = model.stat.jac(x)
    L = model.stat.lap(x)
    theta = model.theta
    if model.stat.base is not None:
        J = np.concatenate([J, model.stat.base.grad(x)[:, None]], axis=1)
        theta = np.append(theta, 1.0)
    jf2 = np.sum(J * J, axis=1)
    return float(theta @ theta), float(pw @ jf2**2), float(pw @ np.sum(L * L, axis=1))


def poincare_bound_rhs(c_p: float, gamma_mle_norm: float, theta_norm2: float, e_jf4: float, e_lap2: float) -> float:
    return 2.0 * c_p**2 * gamma_mle_norm**2 * (theta_norm2 * e_jf4 + e_lap2)


@dataclass(frozen=True)
class AsymptoticReport:
    gamma_sm: np.ndarray
    gamma_mle: np.ndarray
    worst_direction: np.ndarray
    worst_ratio: float
    poincare_bound: float
    smoothness: tuple[float, float]  # (E||JF||^4, E||Laplacian F||^2)
    c_p_restricted: float

    @property
    def sm_norm(self) -> float:
        return op_norm(self.gamma_sm)

    @property
    def mle_norm(self) -> float:
        return op_norm(self.gamma_mle)


def relative_efficiency(g_sm, g_mle) -> tuple[float, np.ndarray]:
    """Max over w of <w, G_sm w>/<w, G_mle w> with the unit-norm maximizer."""
    ratio, w = gen_eig_max(g_sm, g_mle)
    return ratio, w / np.linalg.norm(w)


def restricted_poincare(model: ExpFamilyModel) -> float:
    """sup_w Var<w, F> / E|d/dx <w, F>|^2, the Poincare constant restricted to the span of F."""
    mo = moments(model)
    return gen_eig_max(mo.cov_F, mo.a_matrix)[0]


def asymptotic_report(model: ExpFamilyModel, c_p=None) -> AsymptoticReport:
    """Everything needed to compare the two estimators on ``model``.

    ``c_p`` defaults to the restricted Poincare constant.
    """
    g_sm = gamma_sm(model)
    g_mle = gamma_mle(model)
    ratio, w = relative_efficiency(g_sm, g_mle)
    c_r = restricted_poincare(model)
    th2, jf4, lap2 = smoothness_terms(model)
    rhs = poincare_bound_rhs(c_r if c_p is None else c_p, op_norm(g_mle), th2, jf4, lap2)
    return AsymptoticReport(g_sm, g_mle, w, ratio, rhs, (jf4, lap2), c_r)


class BoundCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def poincare_bound_check(model: ExpFamilyModel, c_p: float) -> BoundCheck:
    """||Gamma_SM|| <= 2 C_P^2 ||Gamma_MLE||^2 (||theta||^2 E||JF||^4 + E||Laplacian F||^2)."""
    if not c_p > 0:
        raise ValueError("c_p must be positive")
    lhs = op_norm(gamma_sm(model))
    th2, jf4, lap2 = smoothness_terms(model)
    rhs = poincare_bound_rhs(c_p, op_norm(gamma_mle(model)), th2, jf4, lap2)
    return BoundCheck(lhs, rhs, bool(lhs <= rhs * (1 + BOUND_SLACK)))


def lemma47_check(model: ExpFamilyModel, c_p_restricted: float) -> bool:
    """A^{-1} <= C_P Cov(F)^{-1}, via the pencil (A^{-1}, Cov(F)^{-1})."""
    mo = moments(model)
    top, _ = gen_eig_max(_inverse_spd(mo.a_matrix), _inverse_spd(mo.cov_F))
    return bool(top <= c_p_restricted * (1 + BOUND_SLACK))


def statistic_pencil_max(model: ExpFamilyModel) -> float:
    mo = moments(model)
    return gen_eig_max(_inverse_spd(mo.a_matrix), _inverse_spd(mo.cov_F))[0]


def _empirical_cov(x):
    xc = x - x.mean(axis=0)
    return xc.T @ xc / len(x)


def lemma48_check(stream: RngStream, pairs: int = 200, draws: int = 1000) -> tuple[bool, float]:
    """Cov(A + B) <= 2 Cov(A) + 2 Cov(B) on random empirical vectors.

    Returns the flag and the smallest eigenvalue seen of the difference.
    """
    gen = stream.generator()
    worst = np.inf
    for _ in range(pairs):
        dim = int(gen.integers(1, 6))
        mix = gen.standard_normal((dim, dim))
        a = gen.standard_normal((draws, dim)) @ mix
        b = gen.standard_normal((draws, dim)) @ gen.standard_normal((dim, dim)) + gen.uniform(-1, 1) * a
        diff = 2 * _empirical_cov(a) + 2 * _empirical_cov(b) - _empirical_cov(a + b)
        lam, _ = sym_eig(diff)
        scale = max(1.0, np.linalg.norm(diff))
        worst = min(worst, lam[0] / scale)
    return bool(worst >= -1e-10), float(worst)


@dataclass(frozen=True)
class CutDiagnostics:
    delta1: float
    var_cut: float
    prob_S: float
    surface_mass: float
    cov_cut: np.ndarray


def _expect_on(model: ExpFamilyModel, f, lo: float, hi: float, panels: int = 512):
    if hi <= lo:
        return np.zeros_like(np.atleast_1d(f(np.array([lo]))[0]))
    x, w = quadrature_nodes(Grid1D(lo, hi, 16), QuadratureRule("gauss_legendre_composite", panels, 8))
    return np.tensordot(w * model.density(x), f(x), axes=(0, 0))


def cut_diagnostics(model: ExpFamilyModel, cut_point: float = 0.0) -> CutDiagnostics:
    """Correlation gap between the statistics and the half-line cut S = {x > cut_point}.

    delta1 = 1 - c^T Cov(F)^{-1} c / Var(1_S) with c = Cov(F, 1_S).
    """
    mo = moments(model)
    lo, hi = model.domain.lo, model.domain.hi
    t = float(np.clip(cut_point, lo, hi))
    one = lambda x: np.ones_like(x)
    mass_right = float(_expect_on(model, one, t, hi))
    mass_left = float(_expect_on(model, one, lo, t))
    prob_s = mass_right / (mass_left + mass_right)
    e_f_s = _expect_on(model, model.stat.eval, t, hi) / (mass_left + mass_right)
    c = e_f_s - mo.mean_F * prob_s
    var_cut = prob_s * (1 - prob_s)
    explained = float(c @ solve_spd(mo.cov_F, c)) / var_cut
    return CutDiagnostics(
        delta1=1.0 - explained,
        var_cut=var_cut,
        prob_S=prob_s,
        surface_mass=float(model.density(np.array([t]))[0]),
        cov_cut=c,
    )


def sandwich_monte_carlo(model: ExpFamilyModel, stream: RngStream, n: int = 1_000_000) -> np.ndarray:
    """Gamma_SM with every expectation replaced by a sample average."""
    x = model.sample(stream, n)
    J = model.stat.jac(x)
    L = model.stat.lap(x)
    drift = J * (J @ model.theta + model.stat.base_grad(x))[:, None] + L
    r_jac = np.linalg.qr(J / np.sqrt(n), mode="r")
    r_drift = np.linalg.qr((drift - drift.mean(axis=0)) / np.sqrt(n), mode="r")
    return sandwich_from_factors(r_jac, r_drift)
