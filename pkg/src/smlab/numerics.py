"""Deterministic numerical substrate.

Grids and quadrature on intervals, a cyclic Jacobi eigensolver for small
dense symmetric matrices, the generalized (pencil) maximum eigenproblem,
SPD solves, and seeded random streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Literal

import numpy as np


class NumericsError(Exception):
    pass


class NonFiniteIntegrand(NumericsError):
    pass


class NoConvergence(NumericsError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class NotPositiveDefinite(NumericsError):
    pass


SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class Grid1D:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ValueError(f"grid needs at least 16 nodes, got {self.n}")
        if not self.hi > self.lo:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(self.lo, self.hi, self.n)
        x.flags.writeable = False
        return x

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    def refined(self) -> "Grid1D":
        """Same interval with the spacing halved."""
        return Grid1D(self.lo, self.hi, 2 * self.n - 1)


@dataclass(frozen=True)
class QuadratureRule:
    kind: Literal["trapezoid", "gauss_legendre_composite"] = "gauss_legendre_composite"
    panels: int = 1024
    points_per_panel: int = 8

    def __post_init__(self):
        if self.kind not in ("trapezoid", "gauss_legendre_composite"):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        if self.panels < 1 or self.points_per_panel < 1:
            raise ValueError("panels and points_per_panel must be positive")

    def refined(self) -> "QuadratureRule":
        return QuadratureRule(self.kind, 2 * self.panels, self.points_per_panel)


def quadrature_nodes(grid: Grid1D, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights such that sum(w * f(x)) approximates the integral over the grid's interval.

    Trapezoid uses the grid nodes; the composite Gauss-Legendre rule splits
    [lo, hi] into ``rule.panels`` equal panels independent of the grid size.
    """
    if rule.kind == "trapezoid":
        x = np.asarray(grid.nodes)
        w = np.full(grid.n, grid.h)
        w[0] = w[-1] = grid.h / 2
        return x, w
    t, wt = np.polynomial.legendre.leggauss(rule.points_per_panel)
    edges = np.linspace(grid.lo, grid.hi, rule.panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    w = (half[:, None] * wt[None, :]).ravel()
    return x, w


def integrate(f: Callable[[np.ndarray], np.ndarray], grid: Grid1D, rule: QuadratureRule) -> float:
    x, w = quadrature_nodes(grid, rule)
    fx = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
    if not np.all(np.isfinite(fx)):
        bad = x[~np.isfinite(fx)][0]
        raise NonFiniteIntegrand(f"integrand not finite at x={bad!r}")
    return float(np.dot(w, fx))


def _as_symmetric(m) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = np.linalg.norm(m)
    if scale > 0 and np.linalg.norm(m - m.T) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def sym_eig(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in ascending order and the matching orthonormal
    eigenvectors as columns.
    """
    a = _as_symmetric(m).copy()
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a[0].copy(), v
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    cap = 100 * n * n
    rotations = 0
    tol = 1e-13 * scale
    while True:
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
                rotations += 1
        if rotations > cap:
            raise NoConvergence("Jacobi iteration cap reached", float(off))
    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    return lam[order], v[:, order]


def cholesky(a) -> np.ndarray:
    a = _as_symmetric(a)
    scale = np.linalg.norm(a, 2) if a.size else 0.0
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if np.min(np.diag(low)) ** 2 <= 1e-15 * scale:
        raise NotPositiveDefinite("matrix is numerically singular")
    return low


def solve_spd(a, rhs) -> np.ndarray:
    low = cholesky(a)
    rhs = np.asarray(rhs, dtype=float)
    y = np.linalg.solve(low, rhs)
    return np.linalg.solve(low.T, y)


def gen_eig_max(a, b) -> tuple[float, np.ndarray]:
    """Largest value of <w, a w> / <w, b w> and a maximizer with <w, b w> = 1."""
    a = _as_symmetric(a)
    b = _as_symmetric(b)
    if a.shape != b.shape:
        raise ValueError("pencil matrices differ in shape")
    lam_b, _ = sym_eig(b)
    if lam_b[0] <= 1e-12 * max(abs(lam_b[-1]), 1e-300):
        raise NotPositiveDefinite(f"pencil denominator has smallest eigenvalue {lam_b[0]:.3e}")
    low = cholesky(b)
    linv_a = np.linalg.solve(low, a)
    c = np.linalg.solve(low, linv_a.T)
    lam, vec = sym_eig(0.5 * (c + c.T))
    w = np.linalg.solve(low.T, vec[:, -1])
    if w[np.argmax(np.abs(w))] < 0:
        w = -w
    return float(lam[-1]), w


def op_norm(m) -> float:
    lam, _ = sym_eig(m)
    return float(max(abs(lam[0]), abs(lam[-1])))


@dataclass(frozen=True)
class RngStream:
    """Independent random substream ``stream_index`` of ``master_seed``.

    Backed by the Philox4x64 counter-based generator keyed through
    ``numpy.random.SeedSequence(master_seed, spawn_key=(stream_index,))``.
    """

    master_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "RngStream":
        # stream indices are folded so children of different parents do not collide
        return RngStream(self.master_seed, (self.stream_index + 1) * 1_000_003 + index)


def draw(gen: np.random.Generator, dist: str, size=None):
    if dist == "uniform01":
        return gen.random(size)
    if dist == "rademacher":
        return 2.0 * gen.integers(0, 2, size=size) - 1.0
    if dist == "std_normal":
        return gen.standard_normal(size)
    raise ValueError(f"unknown distribution {dist!r}")


def rng_draw(stream: RngStream, dist: str, size: int = 1) -> np.ndarray:
    """First ``size`` variates of ``dist`` from a fresh generator for ``stream``."""
    return np.atleast_1d(draw(stream.generator(), dist, size))
