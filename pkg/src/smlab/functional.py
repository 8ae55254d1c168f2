"""Functional-inequality constants of one-dimensional densities.

Densities are passed as log-density values on the nodes of a ``Grid1D``
(normalization is not required), which keeps deep bimodal tails finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .asymptotics import restricted_poincare
from .expfam import ExpFamilyModel
from .numerics import Grid1D, RngStream

# Bobkov-Goetze two-sided criterion for Ent(f^2) <= C E f'^2 on the line:
# B / 150 <= C <= 468 B.  With f^2 = dp/dq, Ent(f^2) = KL and E f'^2 = I/4,
# so C_LS = C / 4.
BG_LOWER_DIVISOR = 150.0
BG_UPPER_FACTOR = 468.0
LS_FROM_ENT = 0.25
CHAIN_SLACK = 1e-6


class ZeroDensityNode(ValueError):
    pass


class DivergentCriterion(ValueError):
    pass


def _check_log_density(grid: Grid1D, log_density) -> np.ndarray:
    ld = np.asarray(log_density, dtype=float)
    if ld.shape != (grid.n,):
        raise ValueError(f"expected {grid.n} log-density values, got shape {ld.shape}")
    if np.any(np.isnan(ld)) or np.any(np.isposinf(ld)):
        raise ValueError("log-density must be finite or -inf")
    bad = np.flatnonzero(~np.isfinite(ld[1:-1]))
    if bad.size:
        raise ZeroDensityNode(f"density vanishes at interior node x={grid.nodes[bad[0] + 1]!r}")
    if not np.isfinite(ld[0]) or not np.isfinite(ld[-1]):
        raise ZeroDensityNode("density vanishes at an endpoint")
    return ld - ld.max()


def log_density_on_grid(model: ExpFamilyModel, grid: Optional[Grid1D] = None) -> tuple[Grid1D, np.ndarray]:
    grid = grid or model.domain
    return grid, model.log_density(np.asarray(grid.nodes))


def _log_cell_masses(grid: Grid1D, ld) -> np.ndarray:
    """log of the trapezoid mass of each cell [x_i, x_{i+1}]."""
    return np.log(grid.h / 2) + np.logaddexp(ld[:-1], ld[1:])


def log_cdf_pair(grid: Grid1D, log_density) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(log Q, log(1 - Q), normalized log q) at the nodes, accumulated in log space from each end."""
    ld = _check_log_density(grid, log_density)
    cells = _log_cell_masses(grid, ld)
    left = np.concatenate([[-np.inf], np.logaddexp.accumulate(cells)])
    right = np.concatenate([np.logaddexp.accumulate(cells[::-1])[::-1], [-np.inf]])
    log_z = left[-1]
    return left - log_z, right - log_z, ld - log_z


# --- Poincare ---------------------------------------------------------------


class SpectralResult(NamedTuple):
    c_p: float
    null_eigenvalue: float
    null_function: np.ndarray  # equal to 1 at the density mode


def _generator_tridiagonal(grid: Grid1D, ld):
    """Symmetrized Neumann discretization M^{-1/2} K M^{-1/2}.

    K is the Dirichlet form sum_i q_{i+1/2} (f_{i+1} - f_i)^2 / h with
    geometric-mean midpoint densities, M = diag(q_i w_i) with trapezoid
    weights.  All density ratios enter as exp of log differences.
    """
    n, h = grid.n, grid.h
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    ratio_up = np.exp(0.5 * (ld[1:] - ld[:-1]))  # sqrt(q_{i+1}/q_i)
    diag = np.zeros(n)
    diag[:-1] += ratio_up
    diag[1:] += 1.0 / ratio_up
    diag /= h * w
    off = -1.0 / (h * np.sqrt(w[:-1] * w[1:]))
    return diag, off, w


def poincare_spectral_detail(grid: Grid1D, log_density) -> SpectralResult:
    ld = _check_log_density(grid, log_density)
    diag, off, w = _generator_tridiagonal(grid, ld)
    lam, vec = eigh_tridiagonal(diag, off, select="i", select_range=(0, 1))
    if lam[1] <= 0:
        raise ValueError("spectral gap not resolved at this grid resolution")
    # f = M^{-1/2} v, formed in log space; nodes where v underflows are nan
    v = vec[:, 0]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_f = np.log(np.abs(v)) - 0.5 * np.log(w) - 0.5 * ld
        f0 = np.sign(v) * np.exp(log_f - log_f[np.argmax(ld)])
    f0[~np.isfinite(f0)] = np.nan
    return SpectralResult(float(1.0 / lam[1]), float(lam[0]), f0)


def poincare_spectral(grid: Grid1D, log_density) -> float:
    """Inverse spectral gap of the Langevin generator of q, i.e. the Poincare constant."""
    return poincare_spectral_detail(grid, log_density).c_p


def poincare_restricted(model: ExpFamilyModel) -> float:
    return restricted_poincare(model)


# --- isoperimetry and log-Sobolev --------------------------------------------


def isoperimetric_1d(grid: Grid1D, log_density) -> float:
    """sup over half-line cuts t of min(Q(t), 1 - Q(t)) / q(t)."""
    log_q_left, log_q_right, lq = log_cdf_pair(grid, log_density)
    inner = slice(1, -1)
    return float(np.exp(np.max(np.minimum(log_q_left, log_q_right)[inner] - lq[inner])))


def _bg_side(log_tail, log_inv_q_int) -> float:
    ok = (log_tail < 0) & np.isfinite(log_tail) & np.isfinite(log_inv_q_int)
    if not np.any(ok):
        return 0.0
    lt = log_tail[ok]
    vals = lt + np.log(-lt) + log_inv_q_int[ok]
    return float(np.exp(np.max(vals)))


def bobkov_gotze_criterion(grid: Grid1D, log_density) -> float:
    """max(B+, B-) with B+ = sup_{x > m} Qbar(x) log(1/Qbar(x)) int_m^x 1/q, m the median."""
    log_q_left, log_q_right, lq = log_cdf_pair(grid, log_density)
    x = np.asarray(grid.nodes)
    k = int(np.searchsorted(np.exp(log_q_left), 0.5))
    k = min(max(k, 1), grid.n - 2)
    # cumulative int 1/q away from node k, trapezoid in log space
    cells = np.log(grid.h / 2) + np.logaddexp(-lq[:-1], -lq[1:])
    right = np.full(grid.n, -np.inf)
    right[k + 1 :] = np.logaddexp.accumulate(cells[k:])
    left = np.full(grid.n, -np.inf)
    left[:k] = np.logaddexp.accumulate(cells[:k][::-1])[::-1]
    b_plus = _bg_side(log_q_right[k + 1 :], right[k + 1 :])
    b_minus = _bg_side(log_q_left[:k], left[:k])
    b = max(b_plus, b_minus)
    if not np.isfinite(b):
        raise DivergentCriterion(f"criterion is not finite on [{x[0]}, {x[-1]}]")
    return b


def log_sobolev_bg(grid: Grid1D, log_density) -> tuple[float, float]:
    """Two-sided bracket (lower, upper) on C_LS in the convention KL <= C_LS I(p|q)."""
    b = bobkov_gotze_criterion(grid, log_density)
    return LS_FROM_ENT * b / BG_LOWER_DIVISOR, LS_FROM_ENT * BG_UPPER_FACTOR * b


@dataclass(frozen=True)
class FunctionalConstants:
    c_p: float
    c_p_restricted: float
    c_ls_lower: float
    c_ls_upper: float
    c_is: float
    grid_n: int
    method_notes: str

    def chain_holds(self) -> bool:
        s = 1 + CHAIN_SLACK
        return bool(
            self.c_p <= 2 * self.c_ls_upper * s
            and self.c_p <= 4 * self.c_is**2 * s
            and self.c_p_restricted <= self.c_p * s
        )


METHOD_NOTES = (
    "c_p: inverse gap of Neumann finite-difference generator; "
    "c_ls: Bobkov-Goetze bracket B/150 <= C <= 468 B for Ent(f^2) <= C E f'^2, C_LS = C/4, "
    "lower end raised to c_p/2; c_is: half-line cuts only"
)


def functional_constants(grid: Grid1D, log_density, model: Optional[ExpFamilyModel] = None) -> FunctionalConstants:
    """All constants for one density; ``c_p_restricted`` needs the family, else equals c_p."""
    c_p = poincare_spectral(grid, log_density)
    lo, hi = log_sobolev_bg(grid, log_density)
    c_r = restricted_poincare(model) if model is not None else c_p
    return FunctionalConstants(
        c_p=c_p,
        c_p_restricted=c_r,
        c_ls_lower=max(lo, c_p / 2),
        c_ls_upper=hi,
        c_is=isoperimetric_1d(grid, log_density),
        grid_n=grid.n,
        method_notes=METHOD_NOTES,
    )


# --- score-matching gap and KL ------------------------------------------------


class GapCheck(NamedTuple):
    kl: float
    gap: float  # J_p(q) - J_p(p) = I(p|q) / 2
    holds: bool
    fisher: float  # I(p|q) = E_p (d/dx log p/q)^2


def _kl_and_fisher(p: ExpFamilyModel, q: ExpFamilyModel) -> tuple[float, float]:
    x, pw = p.quadrature()
    lq = q.log_density(x)
    if np.any(~np.isfinite(lq)):
        raise ZeroDensityNode("q vanishes where p has mass")
    kl = float(pw @ (p.log_density(x) - lq))
    ds = p.score(x) - q.score(x)
    return kl, float(pw @ ds**2)


def prop31_gap_check(p_model: ExpFamilyModel, q_model: ExpFamilyModel, c_ls_upper_of_q: float) -> GapCheck:
    """KL(p, q) against C_LS(q) times the relative Fisher information.

    The score matching gap J_p(q) - J_p(p) is half the relative Fisher
    information, and KL <= C_LS I(p|q) is the log-Sobolev inequality, so the
    check is KL <= 2 C_LS gap.
    """
    kl, fisher = _kl_and_fisher(p_model, q_model)
    holds = kl <= c_ls_upper_of_q * fisher * (1 + 1e-4)
    return GapCheck(kl, fisher / 2, bool(holds), fisher)


def sm_population_loss(p_model: ExpFamilyModel, q_model: ExpFamilyModel) -> float:
    """J_p(q) = E_p[(log q)'' + (log q)'^2 / 2] by quadrature against p."""
    x, pw = p_model.quadrature()
    stat, theta = q_model.stat, q_model.theta
    lap = stat.lap(x) @ theta + stat.base_lap(x)
    s = q_model.score(x)
    return float(pw @ (lap + 0.5 * s * s))


# --- Gaussian finite-sample bound ----------------------------------------------


class RademacherResult(NamedTuple):
    r_n: float
    bound: float
    empirical_kl: float
    holds: bool


def rademacher_gaussian_bound(r_ball: float, d: int, n: int, stream: RngStream, reps: int = 200) -> RademacherResult:
    """Score matching over Gaussian means in the ball ||mu|| <= R.

    The estimator is the sample mean projected onto the ball; the truth is
    mu* = R e_1.
    """
    if r_ball < 0:
        raise ValueError("r_ball must be nonnegative")
    mu = np.zeros(d)
    mu[0] = r_ball
    g_complexity = stream.child(0).generator()
    g_fit = stream.child(1).generator()
    norms = np.empty(reps)
    kls = np.empty(reps)
    for r in range(reps):
        x = mu + g_complexity.standard_normal((n, d))
        eps = 2.0 * g_complexity.integers(0, 2, size=n) - 1.0
        norms[r] = np.linalg.norm(eps @ x) / n
        xbar = (mu + g_fit.standard_normal((n, d))).mean(axis=0)
        nb = np.linalg.norm(xbar)
        mu_hat = xbar if nb <= r_ball else (xbar * (r_ball / nb) if nb > 0 else xbar)
        kls[r] = 0.5 * np.sum((mu - mu_hat) ** 2)
    bound = r_ball * np.sqrt((r_ball**2 + d) / n)
    emp = float(kls.mean())
    return RademacherResult(float(r_ball * norms.mean()), float(bound), emp, bool(emp <= bound))


# --- convolution equivalence ---------------------------------------------------


class LyuCheck(NamedTuple):
    lhs_deriv: float
    rhs_deriv: float
    agree: bool


def _normalized(grid: Grid1D, ld):
    ld = ld - ld.max()
    p = np.exp(ld)
    w = np.full(grid.n, grid.h)
    w[0] = w[-1] = grid.h / 2
    return p / (w @ p), w


def _heat(grid: Grid1D, p, var: float):
    """p * N(0, var) on the uniform grid by direct discrete convolution."""
    half = int(np.ceil(12 * np.sqrt(var) / grid.h))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) * grid.h) ** 2 / var)
    k /= k.sum()
    return np.convolve(p, k, mode="same")


def _kl_grid(p, q, w) -> float:
    mask = p > 0
    return float(np.sum(w[mask] * p[mask] * np.log(p[mask] / q[mask])))


def lyu_equivalence_check(grid: Grid1D, log_p, log_q, t0: float = 1e-3, rtol: float = 1e-2) -> LyuCheck:
    """d/dt KL(p_t, q_t) at t = 0 under heat flow versus -I(p|q).

    Both densities are convolved with N(0, 2t); the derivative uses forward
    differences at t0 and 2 t0 combined by Richardson extrapolation.
    """
    lp = _check_log_density(grid, log_p)
    lq = _check_log_density(grid, log_q)
    p, w = _normalized(grid, lp)
    q, _ = _normalized(grid, lq)
    ds = np.gradient(lp - lq, grid.h, edge_order=2)
    lhs = -float(w @ (p * ds * ds))
    kl0 = _kl_grid(p, q, w)
    diff = []
    for t in (t0, 2 * t0):
        kl_t = _kl_grid(_heat(grid, p, 2 * t), _heat(grid, q, 2 * t), w)
        diff.append((kl_t - kl0) / t)
    rhs = 2 * diff[0] - diff[1]
    scale = max(abs(lhs), abs(rhs))
    agree = scale < 1e-12 or abs(lhs - rhs) <= rtol * scale
    return LyuCheck(lhs, float(rhs), bool(agree))
