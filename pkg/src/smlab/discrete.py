"""Distributions on the hypercube {-1, +1}^d by exact enumeration.

Configurations are stored as integer bitmasks: bit i of the index is the
state of coordinate i, with bit value b mapped to spin 2b - 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .numerics import NoConvergence, RngStream

MAX_D = 12
FIT_GRAD_TOL = 1e-7
FIT_MAX_ITER = 20000
BOUNDARY_FIELD = 8.0


class ZeroConditional(ValueError):
    pass


class DegenerateDenominator(ValueError):
    pass


def all_configs(d: int) -> np.ndarray:
    """(2^d, d) spin array, row x holding the spins of bitmask x."""
    idx = np.arange(2**d)
    return 2 * ((idx[:, None] >> np.arange(d)) & 1) - 1


def spins_to_index(spins) -> np.ndarray:
    s = np.atleast_2d(np.asarray(spins))
    return ((s > 0).astype(np.int64) << np.arange(s.shape[1])).sum(axis=1)


def index_to_spins(index, d: int) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
    return 2 * ((idx[:, None] >> np.arange(d)) & 1) - 1


class HypercubeModel:
    """Unnormalized log-probabilities over all 2^d configurations."""

    def __init__(self, d: int, log_weights):
        if not 1 <= d <= MAX_D:
            raise ValueError(f"d must be in 1..{MAX_D}, got {d}")
        lw = np.array(log_weights, dtype=float)
        if lw.shape != (2**d,):
            raise ValueError(f"expected {2**d} log-weights, got shape {lw.shape}")
        if np.any(np.isnan(lw)) or np.any(np.isposinf(lw)):
            raise ValueError("log-weights must be finite or -inf")
        lw.flags.writeable = False
        self.d = d
        self.log_weights = lw
        self.logZ = float(logsumexp(lw))

    @property
    def log_probs(self) -> np.ndarray:
        return self.log_weights - self.logZ

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def log_cond(self, i: int, idx) -> np.ndarray:
        """log q(x_i | x_{~i}) at the observed value of x_i."""
        idx = np.asarray(idx, dtype=np.int64)
        own = self.log_weights[idx]
        return own - np.logaddexp(own, self.log_weights[idx ^ (1 << i)])

    def prob_plus(self, i: int, idx) -> np.ndarray:
        """q(X_i = +1 | x_{~i})."""
        idx = np.asarray(idx, dtype=np.int64)
        bit = 1 << i
        return expit(self.log_weights[idx | bit] - self.log_weights[idx & ~bit])

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "log_weights": [float(v) for v in self.log_weights]})

    def sample(self, stream: RngStream, n: int) -> np.ndarray:
        """Exact i.i.d. draws as bitmask indices."""
        cdf = np.cumsum(self.probs)
        u = stream.generator().random(n) * cdf[-1]
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


@dataclass(frozen=True)
class IsingFamily:
    d: int
    edges: tuple = ()
    h: np.ndarray = field(default=None)
    J: np.ndarray = field(default=None)

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        for i, j in edges:
            if not 0 <= i < j < self.d:
                raise ValueError(f"edge {(i, j)} must satisfy 0 <= i < j < d")
        object.__setattr__(self, "edges", edges)
        h = np.zeros(self.d) if self.h is None else np.asarray(self.h, dtype=float)
        J = np.zeros(len(edges)) if self.J is None else np.asarray(self.J, dtype=float)
        if h.shape != (self.d,) or J.shape != (len(edges),):
            raise ValueError("parameter shapes do not match d and edges")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "J", J)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.h, self.J])

    def with_params(self, params) -> "IsingFamily":
        params = np.asarray(params, dtype=float)
        return IsingFamily(self.d, self.edges, params[: self.d], params[self.d :])

    def log_weights(self) -> np.ndarray:
        x = all_configs(self.d)
        lw = x @ self.h
        for (i, j), c in zip(self.edges, self.J):
            lw = lw + c * x[:, i] * x[:, j]
        return lw

    def to_model(self) -> HypercubeModel:
        return HypercubeModel(self.d, self.log_weights())

    def coupling_matrix(self) -> np.ndarray:
        m = np.zeros((self.d, self.d))
        for (i, j), c in zip(self.edges, self.J):
            m[i, j] = m[j, i] = c
        return m

    def to_json(self) -> str:
        return json.dumps(
            {"d": self.d, "edges": [list(e) for e in self.edges], "h": self.h.tolist(), "J": self.J.tolist()}
        )


def model_from_json(text: str):
    """Parse either {d, edges, h, J} (IsingFamily) or {d, log_weights} (HypercubeModel)."""
    obj = json.loads(text)
    if "log_weights" in obj:
        return HypercubeModel(int(obj["d"]), obj["log_weights"])
    return IsingFamily(int(obj["d"]), tuple(map(tuple, obj.get("edges", []))), obj.get("h"), obj.get("J"))


@dataclass(frozen=True)
class ConditionalQuery:
    i: int
    x_rest: tuple
    prob_plus: float

    @property
    def prob_minus(self) -> float:
        return 1.0 - self.prob_plus


def conditional_query(model: HypercubeModel, i: int, x_rest: Sequence[int]) -> ConditionalQuery:
    """p(X_i = +1 | X_{~i} = x_rest), with x_rest listing the other d - 1 spins in order."""
    rest = list(x_rest)
    if len(rest) != model.d - 1:
        raise ValueError(f"x_rest needs {model.d - 1} spins")
    spins = rest[:i] + [1] + rest[i:]
    idx = spins_to_index(spins)[0]
    return ConditionalQuery(i, tuple(rest), float(model.prob_plus(i, idx)))


# --- Glauber dynamics ---------------------------------------------------------


def glauber_step(model: HypercubeModel, config, rng: np.random.Generator) -> np.ndarray:
    """One Glauber update of each chain in ``config`` (bitmask indices)."""
    idx = np.atleast_1d(np.asarray(config, dtype=np.int64))
    site = rng.integers(0, model.d, size=idx.shape)
    u = rng.random(idx.shape)
    bit = np.left_shift(1, site)
    plus = idx | bit
    p_plus = expit(model.log_weights[plus] - model.log_weights[idx & ~bit])
    return np.where(u < p_plus, plus, idx & ~bit)


def glauber_run(model: HypercubeModel, start, steps: int, stream: RngStream) -> np.ndarray:
    rng = stream.generator()
    idx = np.atleast_1d(np.asarray(start, dtype=np.int64))
    for _ in range(steps):
        idx = glauber_step(model, idx, rng)
    return idx


def glauber_transition_matrix(model: HypercubeModel) -> np.ndarray:
    """Exact one-step kernel P[x, y] of the random-scan Glauber chain."""
    n = 2**model.d
    p = np.zeros((n, n))
    idx = np.arange(n)
    for i in range(model.d):
        bit = 1 << i
        pp = model.prob_plus(i, idx)
        p[idx, idx | bit] += pp / model.d
        p[idx, idx & ~bit] += (1 - pp) / model.d
    return p


# --- objectives ---------------------------------------------------------------


def _weights(samples, weights):
    idx = np.asarray(samples, dtype=np.int64).ravel()
    if weights is None:
        w = np.full(len(idx), 1.0 / max(len(idx), 1))
    else:
        w = np.asarray(weights, dtype=float).ravel()
        w = w / w.sum()
    return idx, w


def pseudolikelihood_objective(model_q: HypercubeModel, samples, weights=None) -> float:
    """Average of sum_i log q(x_i | x_{~i}) over samples (optionally weighted)."""
    idx, w = _weights(samples, weights)
    total = sum(model_q.log_cond(i, idx) for i in range(model_q.d))
    if np.any(np.isneginf(total[w > 0])):
        raise ZeroConditional("q assigns probability 0 to an observed conditional")
    return float(w @ total)


def ratio_matching_objective(model_q: HypercubeModel, samples, weights=None, check: bool = False) -> float:
    """sum_i mean |1(x_i = +1) - q(X_i = +1 | x_{~i})|^2.

    With ``check`` the odds form is evaluated too and must agree to 1e-12.
    """
    idx, w = _weights(samples, weights)
    spins = index_to_spins(idx, model_q.d)
    val = 0.0
    for i in range(model_q.d):
        val += w @ ((spins[:, i] > 0) - model_q.prob_plus(i, idx)) ** 2
    val = float(val)
    if check:
        other = ratio_matching_objective_odds(model_q, idx, w)
        if abs(val - other) > 1e-12 * max(1.0, abs(val)):
            raise AssertionError(f"ratio matching forms disagree: {val!r} vs {other!r}")
    return val


def ratio_matching_objective_odds(model_q: HypercubeModel, samples, weights=None) -> float:
    """sum_i mean (1 / (1 + q(x) / q(x with spin i flipped)))^2."""
    idx, w = _weights(samples, weights)
    val = 0.0
    for i in range(model_q.d):
        log_odds = model_q.log_weights[idx] - model_q.log_weights[idx ^ (1 << i)]
        val += w @ expit(-log_odds) ** 2
    return float(val)


# --- fits ---------------------------------------------------------------------


class DiscreteFit(NamedTuple):
    family: IsingFamily
    objective: float
    grad_norm: float
    iterations: int
    at_boundary: bool


def _pattern_counts(samples, d):
    idx = np.asarray(samples, dtype=np.int64).ravel()
    if len(idx) == 0:
        raise ValueError("need at least one sample")
    counts = np.bincount(idx, minlength=2**d).astype(float)
    keep = np.flatnonzero(counts)
    return index_to_spins(keep, d).astype(float), counts[keep] / len(idx)


def _local_fields(shape: IsingFamily, params, x):
    fam = shape.with_params(params)
    return fam.h + x @ fam.coupling_matrix()


def _chain_rule(shape: IsingFamily, g_phi, x):
    """Map per-site derivatives dL/dphi_i (rows of g_phi) to (h, J) gradients."""
    gh = g_phi.sum(axis=0)
    gj = np.array([g_phi[:, i] @ x[:, j] + g_phi[:, j] @ x[:, i] for i, j in shape.edges])
    return np.concatenate([gh, gj])


def _pl_value_grad(shape, params, x, w):
    phi = _local_fields(shape, params, x)
    ll = x * phi - np.logaddexp(phi, -phi)
    g_phi = w[:, None] * (x - np.tanh(phi))
    return float(w @ ll.sum(axis=1)), _chain_rule(shape, g_phi, x), phi


def _rm_value_grad(shape, params, x, w):
    phi = _local_fields(shape, params, x)
    s = expit(2 * phi)
    r = (x > 0) - s
    # maximize the negated objective so both fits share one ascent loop
    g_phi = w[:, None] * (2 * r * 2 * s * (1 - s))
    return -float(w @ (r * r).sum(axis=1)), _chain_rule(shape, g_phi, x), phi


def _ascend(value_grad, shape: IsingFamily, samples, init=None) -> DiscreteFit:
    x, w = _pattern_counts(samples, shape.d)
    params = np.zeros(shape.d + len(shape.edges)) if init is None else np.asarray(init, dtype=float)
    val, grad, phi = value_grad(shape, params, x, w)
    step = 1.0
    for it in range(FIT_MAX_ITER):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < FIT_GRAD_TOL:
            return DiscreteFit(shape.with_params(params), val, gnorm, it, bool(np.max(np.abs(phi)) > BOUNDARY_FIELD))
        while True:
            cand = params + step * grad
            c_val, c_grad, c_phi = value_grad(shape, cand, x, w)
            if c_val >= val + 1e-4 * step * gnorm**2 or step < 1e-12:
                break
            step *= 0.5
        params, val, grad, phi = cand, c_val, c_grad, c_phi
        step = min(step * 2.0, 64.0)
    gnorm = float(np.linalg.norm(grad))
    if np.max(np.abs(phi)) > BOUNDARY_FIELD:
        return DiscreteFit(shape.with_params(params), val, gnorm, FIT_MAX_ITER, True)
    raise NoConvergence("discrete fit did not reach the gradient tolerance", gnorm)


def pseudolikelihood_fit(shape: IsingFamily, samples) -> DiscreteFit:
    """Maximize the empirical pseudolikelihood over (h, J) by backtracking gradient ascent.

    Separable data drive the fields to infinity; the fit then stops with
    ``at_boundary`` set once some local field exceeds 8 in magnitude.
    """
    return _ascend(_pl_value_grad, shape, samples)


def ratio_matching_fit(shape: IsingFamily, samples) -> DiscreteFit:
    """Minimize the empirical ratio matching objective; ``objective`` holds its value."""
    fit = _ascend(_rm_value_grad, shape, samples)
    return fit._replace(objective=-fit.objective)


# --- approximate tensorization -------------------------------------------------


def _log_cond_table(lp: np.ndarray, d: int) -> np.ndarray:
    """(d, 2^d) table of log p(x_i | x_{~i}) at every configuration."""
    idx = np.arange(2**d)
    return np.stack([lp - np.logaddexp(lp, lp[idx ^ (1 << i)]) for i in range(d)])


def conditional_kl_sum(log_p: np.ndarray, log_q: np.ndarray, d: int) -> float:
    """sum_i E_p KL(p(X_i | X_{~i}), q(X_i | X_{~i})), as an explicit two-point KL per context."""
    p = np.exp(log_p)
    idx = np.arange(2**d)
    total = 0.0
    for i in range(d):
        bit = 1 << i
        base = idx[(idx & bit) == 0]
        mass = p[base] + p[base | bit]
        live = mass > 0
        b, m = base[live], mass[live]
        kl = np.zeros(len(b))
        for pair in (b, b | bit):
            pc = p[pair] / m
            lq = log_q[pair] - np.logaddexp(log_q[b], log_q[b | bit])
            pos = pc > 0
            kl[pos] += pc[pos] * (np.log(pc[pos]) - lq[pos])
        total += m @ kl
    return float(total)


def at_ratio(log_p: np.ndarray, model_q: HypercubeModel) -> float:
    """KL(p, q) / sum_i E_p KL of conditionals."""
    d = model_q.d
    lp = log_p - logsumexp(log_p)
    p = np.exp(lp)
    kl = float(p @ (lp - model_q.log_probs))
    den = float(p @ (_log_cond_table(lp, d) - _log_cond_table(model_q.log_probs, d)).sum(axis=0))
    if den < 1e-14:
        raise DegenerateDenominator(f"conditional KL sum {den:.3e} is below 1e-14")
    return kl / den


def _at_value_grad(lp, model_q):
    d = model_q.d
    lq = model_q.log_probs
    p = np.exp(lp)
    num = float(p @ (lp - lq))
    cond_gap = (_log_cond_table(lp, d) - _log_cond_table(lq, d)).sum(axis=0)
    den = float(p @ cond_gap)
    if den < 1e-14:
        raise DegenerateDenominator(f"conditional KL sum {den:.3e} is below 1e-14")
    g_num = lp - lq + 1.0
    grad = (g_num * den - num * cond_gap) / den**2
    return num / den, grad


def at_constant_search(
    model_q: HypercubeModel, restarts: int, stream: RngStream, iters: int = 400, spread: float = 2.0
) -> tuple[float, np.ndarray]:
    """Lower bound on the approximate tensorization constant of q.

    Exponentiated-gradient ascent of KL(p, q) / sum_i E_p KL(conditionals)
    over the simplex, from ``restarts`` random tilts of q.  Restart j uses
    substream j, so the best value never decreases as restarts grow.
    Returns the best ratio and its witness distribution.
    """
    if model_q.d > 8:
        raise ValueError("table search needs d <= 8")
    best, witness = -np.inf, None
    for j in range(restarts):
        gen = stream.child(j).generator()
        lp = model_q.log_probs + spread * gen.standard_normal(2**model_q.d)
        lp -= logsumexp(lp)
        val, grad = _at_value_grad(lp, model_q)
        eta = 1.0
        for _ in range(iters):
            accepted = False
            while eta > 1e-10:
                cand = lp + eta * (grad - grad.max())
                cand -= logsumexp(cand)
                try:
                    c_val, c_grad = _at_value_grad(cand, model_q)
                except DegenerateDenominator:
                    c_val = -np.inf
                if c_val > val:
                    lp, val, grad = cand, c_val, c_grad
                    eta *= 1.5
                    accepted = True
                    break
                eta *= 0.5
            if not accepted:
                break
        if val > best:
            best, witness = val, np.exp(lp)
    return float(best), witness


class TensorizationResult(NamedTuple):
    kl: float
    pl_gap: float  # L_p(p) - L_p(q)
    cond_kl: float  # sum_i E_p KL(conditionals)
    identity_error: float
    holds: bool


def prop51_check(model_p: HypercubeModel, model_q: HypercubeModel, c_at: float) -> TensorizationResult:
    """Exact check of KL(p, q) <= C_AT (L_p(p) - L_p(q)) and of the identity behind it."""
    if model_p.d != model_q.d or model_p.d > 8:
        raise ValueError("models must share d <= 8")
    idx = np.arange(2**model_p.d)
    w = model_p.probs
    pl_gap = pseudolikelihood_objective(model_p, idx, w) - pseudolikelihood_objective(model_q, idx, w)
    cond = conditional_kl_sum(model_p.log_probs, model_q.log_probs, model_p.d)
    live = w > 0
    kl = float(w[live] @ (model_p.log_probs[live] - model_q.log_probs[live]))
    err = abs(pl_gap - cond)
    return TensorizationResult(kl, pl_gap, cond, err, bool(kl <= c_at * pl_gap * (1 + 1e-9) + 1e-15))


class TvIdentityResult(NamedTuple):
    tv2_terms: np.ndarray  # E_p (p(+|rest) - q(+|rest))^2 per coordinate
    rm_gap: float  # M_p(q) - M_p(p)
    identity_gap: float  # max per-coordinate discrepancy


def marton_tv_check(model_p: HypercubeModel, model_q: HypercubeModel) -> TvIdentityResult:
    """Per coordinate, E|1(X_i=+1) - q(+|.)|^2 - E|1(X_i=+1) - p(+|.)|^2 equals E TV(p(.|rest), q(.|rest))^2."""
    if model_p.d != model_q.d or model_p.d > 8:
        raise ValueError("models must share d <= 8")
    d = model_p.d
    idx = np.arange(2**d)
    w = model_p.probs
    plus = all_configs(d) > 0
    terms = np.empty(d)
    gaps = np.empty(d)
    for i in range(d):
        pp = model_p.prob_plus(i, idx)
        qp = model_q.prob_plus(i, idx)
        terms[i] = w @ (pp - qp) ** 2
        gaps[i] = w @ ((plus[:, i] - qp) ** 2 - (plus[:, i] - pp) ** 2)
    rm_gap = ratio_matching_objective(model_q, idx, w) - ratio_matching_objective(model_p, idx, w)
    identity_gap = max(float(np.max(np.abs(gaps - terms))), abs(rm_gap - float(terms.sum())))
    return TvIdentityResult(terms, float(rm_gap), identity_gap)
