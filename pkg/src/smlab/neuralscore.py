"""A one-hidden-layer tanh score network trained by SGD on the score matching loss."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .expfam import ExpFamilyModel
from .numerics import Grid1D, RngStream

DIVERGENCE_LOSS = 1e6


class DivergedLoss(RuntimeError):
    pass


@dataclass
class ScoreNet1D:
    """s(x) = skip * x + sum_j a_j tanh(b_j x + c_j)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    skip: float = 0.0

    @property
    def k(self) -> int:
        return len(self.a)

    @classmethod
    def init(cls, width: int, stream: RngStream) -> "ScoreNet1D":
        gen = stream.generator()
        scale = 4.0 / np.sqrt(width)
        b = gen.uniform(-1, 1, width) * scale
        c = gen.uniform(-1, 1, width) * scale
        return cls(np.zeros(width), b, c, -0.1)

    def _hidden(self, x):
        x = np.asarray(x, dtype=float)
        return np.tanh(np.multiply.outer(x, self.b) + self.c)

    def __call__(self, x) -> np.ndarray:
        return self.skip * np.asarray(x, dtype=float) + self._hidden(x) @ self.a

    def deriv(self, x) -> np.ndarray:
        t = self._hidden(x)
        return self.skip + (1 - t * t) @ (self.a * self.b)

    def deriv2(self, x) -> np.ndarray:
        t = self._hidden(x)
        return (-2 * t * (1 - t * t)) @ (self.a * self.b * self.b)

    def copy(self) -> "ScoreNet1D":
        return ScoreNet1D(self.a.copy(), self.b.copy(), self.c.copy(), float(self.skip))

    def to_json(self) -> str:
        return json.dumps({"a": self.a.tolist(), "b": self.b.tolist(), "c": self.c.tolist(), "skip": self.skip})

    @classmethod
    def from_json(cls, text: str) -> "ScoreNet1D":
        obj = json.loads(text)
        return cls(np.array(obj["a"], float), np.array(obj["b"], float), np.array(obj["c"], float), float(obj["skip"]))


@dataclass(frozen=True)
class NetGrad:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    skip: float


def sm_loss_and_grad(net: ScoreNet1D, batch) -> tuple[float, NetGrad]:
    """Loss (1/b) sum [s'(x) + s(x)^2 / 2] and its exact parameter gradient."""
    x = np.asarray(batch, dtype=float).ravel()
    if len(x) == 0:
        raise ValueError("empty batch")
    t = np.tanh(np.multiply.outer(x, net.b) + net.c)
    sech2 = 1 - t * t
    dsech2 = -2 * t * sech2
    s = net.skip * x + t @ net.a
    ds = net.skip + sech2 @ (net.a * net.b)
    loss = float(np.mean(ds + 0.5 * s * s))
    n = len(x)
    sx = s * x
    g_skip = float(np.mean(1.0 + sx))
    g_a = (net.b * sech2.sum(axis=0) + s @ t) / n
    # d/du of a b sech^2(u) is a b dsech2; d/du of a tanh(u) is a sech2
    g_c = net.a * (net.b * dsech2.sum(axis=0) + s @ sech2) / n
    g_b = net.a * (sech2.sum(axis=0) + net.b * (x @ dsech2) + sx @ sech2) / n
    return loss, NetGrad(g_a, g_b, g_c, g_skip)


@dataclass(frozen=True)
class TrainConfig:
    width: int = 256
    steps: int = 30000
    batch: int = 64
    step_size: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if min(self.width, self.steps, self.batch) <= 0 or not self.step_size > 0:
            raise ValueError("all training settings must be positive")


def train(target: ExpFamilyModel, cfg: TrainConfig, history: list | None = None) -> ScoreNet1D:
    """Plain constant-step SGD on fresh batches from ``target``.

    Per-step batch losses are appended to ``history`` when given.
    """
    root = RngStream(cfg.seed, 0)
    net = ScoreNet1D.init(cfg.width, root.child(0))
    gen = root.child(1).generator()
    table, nodes = target.cdf_table, np.asarray(target.domain.nodes)
    lr = cfg.step_size
    for step in range(cfg.steps):
        x = np.interp(gen.random(cfg.batch), table, nodes)
        loss, g = sm_loss_and_grad(net, x)
        if not np.isfinite(loss) or abs(loss) > DIVERGENCE_LOSS:
            raise DivergedLoss(f"loss {loss!r} at step {step}")
        if history is not None:
            history.append(loss)
        net.a -= lr * g.a
        net.b -= lr * g.b
        net.c -= lr * g.c
        net.skip -= lr * g.skip
    return net


def reconstruct_density(net: ScoreNet1D, grid: Grid1D) -> np.ndarray:
    """Density on the grid nodes whose log-derivative is the net.

    log p is the cumulative integral of s from the grid midpoint, with a
    4-point Gauss-Legendre rule per interval; normalized to trapezoid mass 1.
    """
    x = np.asarray(grid.nodes)
    t, wt = np.polynomial.legendre.leggauss(4)
    mid = 0.5 * (x[:-1] + x[1:])
    half = 0.5 * grid.h
    pts = mid[:, None] + half * t[None, :]
    cell = (net(pts.ravel()).reshape(pts.shape) * (half * wt)).sum(axis=1)
    logp = np.concatenate([[0.0], np.cumsum(cell)])
    logp -= logp[grid.n // 2]
    logp -= logp.max()
    p = np.exp(logp)
    w = np.full(grid.n, grid.h)
    w[0] = w[-1] = grid.h / 2
    return p / (w @ p)


def trapezoid_weights(grid: Grid1D) -> np.ndarray:
    w = np.full(grid.n, grid.h)
    w[0] = w[-1] = grid.h / 2
    return w


def tv_distance(grid: Grid1D, p, q) -> float:
    return float(0.5 * trapezoid_weights(grid) @ np.abs(np.asarray(p) - np.asarray(q)))


def mode_weight_ratio(grid: Grid1D, density) -> float:
    """Mass on x > 0 over mass on x < 0."""
    x = np.asarray(grid.nodes)
    w = trapezoid_weights(grid) * np.asarray(density)
    return float(w[x > 0].sum() / w[x < 0].sum())


def mode_score_error(net: ScoreNet1D, target: ExpFamilyModel, center: float, half_width: float = 1.0) -> float:
    """sup over [center - h, center + h] of |target score - s|."""
    x = np.linspace(center - half_width, center + half_width, 401)
    return float(np.max(np.abs(target.score(x) - net(x))))


def density_csv(grid: Grid1D, density) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "density"])
    for xi, pi in zip(grid.nodes, density):
        w.writerow([repr(float(xi)), repr(float(pi))])
    return buf.getvalue()


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
