"""Score matching and maximum likelihood fits for one-dimensional exponential families."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .expfam import DivergentIntegral, ExpFamilyModel, SufficientStatistic, moments
from .numerics import Grid1D, NoConvergence, NotPositiveDefinite, QuadratureRule, solve_spd

log = logging.getLogger(__name__)

MLE_GRAD_TOL = 1e-8
MLE_MAX_ITER = 100
MLE_MAX_HALVINGS = 30
SM_RANK_TOL = 1e-13


class SingularEmpiricalMatrix(Exception):
    def __init__(self, smallest_eigenvalue: float):
        super().__init__(f"empirical E[(JF)(JF)^T] is singular (smallest eigenvalue {smallest_eigenvalue:.3e})")
        self.smallest_eigenvalue = smallest_eigenvalue


@dataclass(frozen=True)
class FitReport:
    theta_hat: np.ndarray
    n_samples: int
    method: str
    objective_value: float
    newton_iters: int = 0
    converged: bool = False
    residual: float = float("nan")


def _empirical_terms(stat: SufficientStatistic, samples):
    x = np.asarray(samples, dtype=float).ravel()
    J = stat.jac(x)
    L = stat.lap(x)
    c = L.mean(axis=0) + (J * stat.base_grad(x)[:, None]).mean(axis=0)
    return x, J, c


def score_matching_fit(stat: SufficientStatistic, samples) -> FitReport:
    """theta_hat = -Ehat[(JF)(JF)^T]^{-1} Ehat[Laplacian F + (JF) b'].

    The normal matrix is never formed: an SVD of the scaled Jacobian rows keeps
    nearly collinear statistics (cut families at large offset) resolvable.
    """
    x, J, c = _empirical_terms(stat, samples)
    n = len(x)
    if n < stat.m:
        raise ValueError(f"need at least m={stat.m} samples, got {n}")
    _, sv, vt = np.linalg.svd(J / np.sqrt(n), full_matrices=False)
    if sv[-1] <= SM_RANK_TOL * sv[0]:
        raise SingularEmpiricalMatrix(float(sv[-1] ** 2))
    theta = -(vt.T @ ((vt @ c) / sv**2))
    gram = J.T @ J / n
    res = np.linalg.norm(gram @ theta + c) / (np.linalg.norm(gram) * np.linalg.norm(theta) + np.linalg.norm(c))
    return FitReport(
        theta_hat=theta,
        n_samples=n,
        method="score_matching",
        objective_value=sm_empirical_loss(stat, theta, x),
        converged=bool(res < 1e-10),
        residual=float(res),
    )


def sm_empirical_loss(stat: SufficientStatistic, theta, samples) -> float:
    """(1/n) sum [ (log q)''(x_i) + 0.5 (log q)'(x_i)^2 ]."""
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) == 0:
        return 0.0
    theta = np.asarray(theta, dtype=float)
    lap = stat.lap(x) @ theta + stat.base_lap(x)
    s = stat.score(theta, x)
    return float(np.mean(lap + 0.5 * s * s))


def sm_empirical_grad(stat: SufficientStatistic, theta, samples) -> np.ndarray:
    x, J, c = _empirical_terms(stat, samples)
    return J.T @ (J @ np.asarray(theta, dtype=float)) / len(x) + c


def _loglik(stat, theta, mean_F, mean_b, domain, quad):
    model = ExpFamilyModel(stat, theta, domain, quad, check_truncation=False)
    return float(theta @ mean_F + mean_b - model.logZ), model


def _newton(stat, theta, mean_F, mean_b, n, domain, quad) -> FitReport:
    obj, model = _loglik(stat, theta, mean_F, mean_b, domain, quad)
    for it in range(MLE_MAX_ITER + 1):
        mo = moments(model)
        grad = mean_F - mo.mean_F
        gnorm = float(np.linalg.norm(grad))
        if gnorm < MLE_GRAD_TOL:
            return FitReport(theta, n, "mle", obj, newton_iters=it, converged=True, residual=gnorm)
        if it == MLE_MAX_ITER:
            break
        step = solve_spd(mo.cov_F, grad)
        t = 1.0
        for _ in range(MLE_MAX_HALVINGS + 1):
            cand = theta + t * step
            try:
                cand_obj, cand_model = _loglik(stat, cand, mean_F, mean_b, domain, quad)
                if cand_obj >= obj - 1e-13 * (1.0 + abs(obj)):
                    break
            except DivergentIntegral:
                pass
            t *= 0.5
        else:
            raise DivergentIntegral(f"step halving failed {MLE_MAX_HALVINGS} times at theta={theta}")
        theta, obj, model = cand, cand_obj, cand_model
    raise NoConvergence(f"Newton did not reach gradient norm {MLE_GRAD_TOL}", gnorm)


def mle_fit(
    stat: SufficientStatistic,
    samples,
    domain: Grid1D,
    quad: Optional[QuadratureRule] = None,
    theta_init=None,
) -> FitReport:
    """Damped Newton ascent on theta -> <theta, Ehat F> - logZ(theta).

    The gradient is Ehat F - E_theta F and the Hessian -Cov_theta(F); a step
    is halved until the objective does not decrease.  Starts from
    ``theta_init`` or else the score matching estimate, and falls back to
    theta = 0 when Newton fails from that start (the log-likelihood is
    concave, so the start does not change the maximizer).
    """
    quad = quad or QuadratureRule()
    x = np.asarray(samples, dtype=float).ravel()
    mean_F = stat.eval(x).mean(axis=0)
    mean_b = float(stat.base.value(x).mean()) if stat.base is not None else 0.0

    starts = []
    if theta_init is not None:
        starts.append(np.asarray(theta_init, dtype=float))
    else:
        try:
            starts.append(score_matching_fit(stat, x).theta_hat)
        except SingularEmpiricalMatrix:
            pass
    starts.append(np.zeros(stat.m))
    failure: Exception = DivergentIntegral("no starting point")
    for theta in starts:
        try:
            return _newton(stat, theta, mean_F, mean_b, len(x), domain, quad)
        except (DivergentIntegral, NoConvergence, NotPositiveDefinite) as exc:
            log.debug("Newton from %s failed: %s", theta, exc)
            failure = exc
    raise failure
