"""Experiment runners, configuration and CSV/SVG emission.

Every runner is a pure function of its resolved parameters: replicate ``s``
of parameter point ``k`` draws from ``RngStream(master_seed, s).child(k)``,
so output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import asymptotics, discrete, functional, neuralscore
from .estimators import mle_fit, score_matching_fit
from .expfam import ExpFamilyModel, build_statistic, catalog_model
from .numerics import Grid1D, RngStream, sym_eig

log = logging.getLogger(__name__)

METHODS = ("sm", "mle", "pl", "rm", "na")
METRICS = frozenset(
    {
        # estimation
        "log10_error", "error", "theta_0", "theta_1",
        # asymptotics
        "worst_ratio", "gamma_sm_norm", "gamma_mle_norm", "c_p_restricted", "e_jf4", "e_lap2",
        "principal_angle_deg", "ellipse50_major", "ellipse50_minor", "ellipse90_major",
        "ellipse90_minor", "ellipse_angle_deg",
        # neural
        "tv", "log_mode_ratio", "mode_score_error", "final_loss",
        # functional
        "c_p", "c_ls_lower", "c_ls_upper", "c_is", "kl", "gap", "fisher",
        "lhs_deriv", "rhs_deriv", "r_ball", "dim", "n_samples", "r_n", "bound", "empirical_kl",
        # discrete
        "rm_identity_error", "pl_identity_error", "tv_identity_error", "c_at_lower",
        "h_0", "h_1", "J_01", "param_error",
        # acceptance bookkeeping
        "consistency_residual", "mc_frobenius_rel", "poincare_lhs", "poincare_rhs",
    }
)  # fmt: skip
NO_SEED = -1
CSV_HEADER = ("experiment", "seed", "param", "method", "metric", "value")


class ResultRow(NamedTuple):
    experiment: str
    seed: int
    param: float
    method: str
    metric: str
    value: float


def _row(experiment, seed, param, method, metric, value) -> ResultRow:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    return ResultRow(experiment, int(seed), float(param), method, metric, float(value))


def canonical_order(rows: Sequence[ResultRow]) -> list[ResultRow]:
    return sorted(rows, key=lambda r: (r.experiment, r.param, r.seed, r.method, r.metric))


# --- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    runner: Callable
    defaults: dict
    doc: str


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        unknown = set(obj) - {"experiment", "params", "output_dir"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in obj:
            raise ValueError("config needs an 'experiment' key")
        return cls(obj["experiment"], dict(obj.get("params", {})), obj.get("output_dir", "results")).resolved()

    def resolved(self) -> "ExperimentConfig":
        """Validate keys against the experiment's schema and fill in defaults."""
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; known: {sorted(EXPERIMENTS)}")
        defaults = EXPERIMENTS[self.experiment].defaults
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown params for {self.experiment}: {sorted(unknown)}; accepted: {sorted(defaults)}")
        params = dict(defaults)
        for key, value in self.params.items():
            params[key] = _coerce(key, value, defaults[key])
        return ExperimentConfig(self.experiment, params, self.output_dir)

    def to_json(self) -> str:
        return json.dumps(
            {"experiment": self.experiment, "params": self.params, "output_dir": self.output_dir},
            indent=2,
            sort_keys=True,
        )


def _coerce(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"param {key!r} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ValueError(f"param {key!r} must be an integer")
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ValueError(f"param {key!r} must be a list")
        return [type(default[0])(v) if default else v for v in value]
    return value


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


# --- parallel map -------------------------------------------------------------


def thread_cap() -> int:
    """Worker count from SMLAB_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("SMLAB_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(func, items: list) -> list:
    workers = min(thread_cap(), len(items))
    if workers <= 1:
        return [func(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, *zip(*items)))


@lru_cache(maxsize=64)
def _model(name: str, key: tuple, grid_n: int):
    return catalog_model(name, n=grid_n, **dict(key))


def _stream(master_seed: int, seed: int, k: int) -> RngStream:
    return RngStream(master_seed, seed).child(k)


# --- bimodal sweeps -----------------------------------------------------------


def _fit_replicate(family: str, key: tuple, grid_n: int, n: int, master_seed: int, seed: int, k: int):
    model = _model(family, key, grid_n)
    x = model.sample(_stream(master_seed, seed, k), n)
    out = {}
    for method, fit in (("sm", lambda: score_matching_fit(model.stat, x)), ("mle", lambda: mle_fit(model.stat, x, model.domain))):
        try:
            out[method] = fit().theta_hat
        except Exception as exc:  # recorded as an error row; the sweep continues
            log.warning("%s fit failed for %s seed %d: %s", method, family, seed, exc)
            out[method] = None
    return out


def _ellipse_rows(exp, a, method, errs) -> list[ResultRow]:
    cov = np.cov(errs.T)
    lam, vec = sym_eig(cov)
    major = vec[:, -1]
    angle = math.degrees(math.atan2(major[1], major[0])) % 180.0
    rows = [_row(exp, NO_SEED, a, method, "ellipse_angle_deg", angle)]
    for p, tag in ((0.5, "50"), (0.9, "90")):
        r2 = -2.0 * math.log(1 - p)  # chi-square quantile with 2 degrees of freedom
        rows.append(_row(exp, NO_SEED, a, method, f"ellipse{tag}_major", math.sqrt(max(lam[-1], 0) * r2)))
        rows.append(_row(exp, NO_SEED, a, method, f"ellipse{tag}_minor", math.sqrt(max(lam[0], 0) * r2)))
    return rows


def _bimodal_sweep(exp: str, family: str, p: dict) -> list[ResultRow]:
    rows = []
    for k, a in enumerate(p["offsets"]):
        if not 1 <= a <= 7:
            raise ValueError(f"offset {a} outside [1, 7]")
        key = (("a", float(a)),)
        model = _model(family, key, p["grid_n"])
        rep = asymptotics.asymptotic_report(model)
        rows += [
            _row(exp, NO_SEED, a, "sm", "worst_ratio", rep.worst_ratio),
            _row(exp, NO_SEED, a, "sm", "gamma_sm_norm", rep.sm_norm),
            _row(exp, NO_SEED, a, "mle", "gamma_mle_norm", rep.mle_norm),
            _row(exp, NO_SEED, a, "na", "c_p_restricted", rep.c_p_restricted),
        ]
        items = [(family, key, p["grid_n"], p["n"], p["master_seed"], s, k) for s in range(p["seeds"])]
        fits = _pmap(_fit_replicate, items)
        errs = {"sm": [], "mle": []}
        for s, out in enumerate(fits):
            for method, theta in out.items():
                if theta is None:
                    rows.append(_row(exp, s, a, method, "error", float("nan")))
                    continue
                e = theta - model.theta
                errs[method].append(e)
                rows.append(_row(exp, s, a, method, "log10_error", math.log10(max(np.linalg.norm(e), 1e-300))))
                for j, v in enumerate(theta[:2]):
                    rows.append(_row(exp, s, a, method, f"theta_{j}", v))
        if model.stat.m == 2:
            diff_dir = np.array([1.0, -1.0]) / math.sqrt(2)
            for method, e in errs.items():
                if len(e) < 3:
                    continue
                e = np.array(e)
                _, vec = sym_eig(np.cov(e.T))
                cosang = min(1.0, abs(float(vec[:, -1] @ diff_dir)))
                rows.append(_row(exp, NO_SEED, a, method, "principal_angle_deg", math.degrees(math.acos(cosang))))
                rows += _ellipse_rows(exp, a, method, e)
    return rows


def run_bimodal_cut(p: dict) -> list[ResultRow]:
    """SM versus MLE on the two-statistic family with the erf cut direction, (theta0, theta1) = (1, 0)."""
    return _bimodal_sweep("bimodal_cut", "bimodal_with_cut", p)


def run_bimodal_nocut(p: dict) -> list[ResultRow]:
    """Same sweep with the cut statistic removed."""
    return _bimodal_sweep("bimodal_nocut", "bimodal_nocut", p)


def run_oscillating(p: dict) -> list[ResultRow]:
    """Asymptotic norms and smoothness terms across omega, plus Monte Carlo errors when seeds > 0."""
    exp = "oscillating"
    rows = []
    for k, w in enumerate(p["omegas"]):
        key = (("omega", float(w)),)
        model = _model("oscillating", key, p["grid_n"])
        rep = asymptotics.asymptotic_report(model)
        rows += [
            _row(exp, NO_SEED, w, "sm", "gamma_sm_norm", rep.sm_norm),
            _row(exp, NO_SEED, w, "mle", "gamma_mle_norm", rep.mle_norm),
            _row(exp, NO_SEED, w, "sm", "worst_ratio", rep.worst_ratio),
            _row(exp, NO_SEED, w, "na", "e_jf4", rep.smoothness[0]),
            _row(exp, NO_SEED, w, "na", "e_lap2", rep.smoothness[1]),
        ]
        items = [("oscillating", key, p["grid_n"], p["n"], p["master_seed"], s, k) for s in range(p["seeds"])]
        for s, out in enumerate(_pmap(_fit_replicate, items)):
            for method, theta in out.items():
                if theta is None:
                    rows.append(_row(exp, s, w, method, "error", float("nan")))
                else:
                    e = np.linalg.norm(theta - model.theta)
                    rows.append(_row(exp, s, w, method, "log10_error", math.log10(max(e, 1e-300))))
    return rows


# --- neural ---------------------------------------------------------------------


def _neural_replicate(a: float, seed: int, cfg: dict, master_seed: int, grid_n: int):
    target = _model("gaussian_mixture", (("a", float(a)),), grid_n)
    tc = neuralscore.TrainConfig(cfg["width"], cfg["steps"], cfg["batch"], cfg["step_size"], master_seed * 1000 + seed)
    history: list = []
    try:
        net = neuralscore.train(target, tc, history)
    except neuralscore.DivergedLoss as exc:
        log.warning("training diverged for a=%g seed %d: %s", a, seed, exc)
        return None
    grid = target.domain
    rec = neuralscore.reconstruct_density(net, grid)
    truth = target.density(np.asarray(grid.nodes))
    tail = history[-max(1, len(history) // 10) :]
    return {
        "tv": neuralscore.tv_distance(grid, rec, truth),
        "log_mode_ratio": math.log(neuralscore.mode_weight_ratio(grid, rec)),
        "mode_score_error": neuralscore.mode_score_error(net, target, a),
        "final_loss": float(np.mean(tail)),
    }


def run_neural_bimodal(p: dict) -> list[ResultRow]:
    """Score network on the equal mixture of N(-a, 1) and N(a, 1)."""
    exp = "neural_bimodal"
    cfg = {k: p[k] for k in ("width", "steps", "batch", "step_size")}
    items = [(a, s, cfg, p["master_seed"], p["grid_n"]) for a in p["offsets"] for s in range(p["seeds"])]
    rows = []
    for (a, s, *_), out in zip(items, _pmap(_neural_replicate, items)):
        if out is None:
            rows.append(_row(exp, s, a, "sm", "error", float("nan")))
            continue
        rows += [_row(exp, s, a, "sm", metric, value) for metric, value in out.items()]
    return rows


# --- functional constants ---------------------------------------------------------


def _gaussian_density(sigma: float, n: int):
    grid = Grid1D(-12 * sigma, 12 * sigma, n)
    return grid, -0.5 * (np.asarray(grid.nodes) / sigma) ** 2


def functional_densities(grid_n: int) -> list[tuple[str, float, Grid1D, np.ndarray, object]]:
    """(label, param, grid, log-density, model or None) for the tested densities."""
    out = []
    for sigma in (1.0, 2.0):
        g, ld = _gaussian_density(sigma, grid_n)
        out.append(("normal", sigma, g, ld, None))
    for a in (2.0, 3.0, 4.0, 5.0):
        m = _model("bimodal_quartic", (("a", a),), grid_n)
        out.append(("bimodal_quartic", a, *functional.log_density_on_grid(m), m))
    for a in (1.0, 3.0, 5.0):
        m = _model("bimodal_with_cut", (("a", a),), grid_n)
        out.append(("bimodal_with_cut", a, *functional.log_density_on_grid(m), m))
    for a in (2.0, 4.0, 6.0):
        m = _model("gaussian_mixture", (("a", a),), grid_n)
        out.append(("gaussian_mixture", a, *functional.log_density_on_grid(m), m))
    return out


FUNCTIONAL_FAMILY_CODES = {"normal": 0, "bimodal_quartic": 1, "bimodal_with_cut": 2, "gaussian_mixture": 3}


def run_functional_sweep(p: dict) -> list[ResultRow]:
    """Poincare, log-Sobolev bracket and isoperimetric estimates per density.

    ``param`` encodes family code * 100 + parameter (sigma or a).
    """
    exp = "functional_sweep"
    rows = []
    for label, value, grid, ld, model in functional_densities(p["grid_n"]):
        fc = functional.functional_constants(grid, ld, model)
        param = FUNCTIONAL_FAMILY_CODES[label] * 100 + value
        for metric in ("c_p", "c_p_restricted", "c_ls_lower", "c_ls_upper", "c_is"):
            rows.append(_row(exp, NO_SEED, param, "na", metric, getattr(fc, metric)))
    for k, (pm, qm) in enumerate(gap_check_pairs(p["grid_n"])):
        _, c_ls_upper = functional.log_sobolev_bg(*functional.log_density_on_grid(qm))
        chk = functional.prop31_gap_check(pm, qm, c_ls_upper)
        for metric in ("kl", "gap", "fisher"):
            rows.append(_row(exp, NO_SEED, 1000 + k, "sm", metric, getattr(chk, metric)))
    return rows


def gap_check_pairs(grid_n: int) -> list:
    """(p, q) on a common domain: Gaussian shift, bimodal(a=1) vs normal, bimodal a=2 vs a=3."""
    q_norm = catalog_model("gaussian_mean", theta=[0.0], n=grid_n)
    shift = catalog_model("gaussian_mean", theta=[0.7], n=grid_n)
    bim1 = catalog_model("bimodal_quartic", a=1.0, n=grid_n)
    q_bim3 = catalog_model("bimodal_quartic", a=3.0, n=grid_n)
    p_bim2 = ExpFamilyModel(build_statistic("bimodal_quartic", a=2.0), [1.0], q_bim3.domain)
    return [
        (shift, q_norm),
        (bim1, ExpFamilyModel(q_norm.stat, [0.0], bim1.domain)),
        (p_bim2, q_bim3),
    ]


def lyu_pairs(grid_n: int):
    """(param, grid, log p, log q): the Gaussian shift pair and bimodal(a=1) against the standard normal."""
    q = catalog_model("gaussian_mean", theta=[0.0], n=grid_n)
    g = q.domain
    nodes = np.asarray(g.nodes)
    p1 = catalog_model("gaussian_mean", theta=[0.5], n=grid_n)
    p2 = catalog_model("bimodal_quartic", a=1.0, n=grid_n)
    return [(0.0, g, p1.log_density(nodes), q.log_density(nodes)), (1.0, g, p2.log_density(nodes), q.log_density(nodes))]


def run_appendix_lyu(p: dict) -> list[ResultRow]:
    exp = "appendix_lyu"
    rows = []
    for param, g, lp, lq in lyu_pairs(p["grid_n"]):
        res = functional.lyu_equivalence_check(g, lp, lq, t0=p["t0"])
        rows.append(_row(exp, NO_SEED, param, "na", "lhs_deriv", res.lhs_deriv))
        rows.append(_row(exp, NO_SEED, param, "na", "rhs_deriv", res.rhs_deriv))
    return rows


def run_rademacher_gaussian(p: dict) -> list[ResultRow]:
    exp = "rademacher_gaussian"
    rows = []
    for k, (r, d, n) in enumerate(p["cases"]):
        res = functional.rademacher_gaussian_bound(float(r), int(d), int(n), RngStream(p["master_seed"], k), p["reps"])
        for metric, v in (("r_ball", r), ("dim", d), ("n_samples", n), ("r_n", res.r_n), ("bound", res.bound), ("empirical_kl", res.empirical_kl)):
            rows.append(_row(exp, NO_SEED, k, "sm", metric, v))
    return rows


# --- discrete -----------------------------------------------------------------------


def _random_model(gen, d) -> discrete.HypercubeModel:
    return discrete.HypercubeModel(d, gen.normal(size=2**d))


def run_discrete_suite(p: dict) -> list[ResultRow]:
    """Enumeration identities, tensorization searches and the two Ising estimators.

    param 0: identities on random d = 3 pairs; 1: product-measure search;
    2: epsilon-mixture searches (param 2 + eps); 3: edge recovery.
    """
    exp = "discrete_suite"
    rows = []
    gen = RngStream(p["master_seed"], 0).generator()
    rm_err = pl_err = tv_err = 0.0
    idx = np.arange(8)
    for _ in range(p["instances"]):
        mp, mq = _random_model(gen, 3), _random_model(gen, 3)
        w = mp.probs
        a = discrete.ratio_matching_objective(mq, idx, w)
        b = discrete.ratio_matching_objective_odds(mq, idx, w)
        rm_err = max(rm_err, abs(a - b))
        pl_err = max(pl_err, discrete.prop51_check(mp, mq, 1.0).identity_error)
        tv_err = max(tv_err, discrete.marton_tv_check(mp, mq).identity_gap)
    rows += [
        _row(exp, NO_SEED, 0, "rm", "rm_identity_error", rm_err),
        _row(exp, NO_SEED, 0, "pl", "pl_identity_error", pl_err),
        _row(exp, NO_SEED, 0, "rm", "tv_identity_error", tv_err),
    ]
    product = discrete.IsingFamily(2, (), [0.4, -0.7]).to_model()
    c_prod, _ = discrete.at_constant_search(product, p["restarts"], RngStream(p["master_seed"], 1))
    rows.append(_row(exp, NO_SEED, 1, "pl", "c_at_lower", c_prod))
    for eps in (0.1, 0.03, 0.01):
        lw = np.log(eps / 16 + np.where(np.isin(np.arange(16), [0, 15]), (1 - eps) / 2, 0.0))
        c, _ = discrete.at_constant_search(discrete.HypercubeModel(4, lw), p["restarts"], RngStream(p["master_seed"], 2))
        rows.append(_row(exp, NO_SEED, 2 + eps, "pl", "c_at_lower", c))
    truth = discrete.IsingFamily(2, ((0, 1),), [0.0, 0.0], [0.8])
    shape = discrete.IsingFamily(2, ((0, 1),))
    for s in range(p["seeds"]):
        x = truth.to_model().sample(RngStream(p["master_seed"], s).child(3), p["n"])
        for method, fit in (("pl", discrete.pseudolikelihood_fit), ("rm", discrete.ratio_matching_fit)):
            try:
                est = fit(shape, x).family
            except Exception as exc:
                log.warning("%s fit failed: %s", method, exc)
                rows.append(_row(exp, s, 3, method, "error", float("nan")))
                continue
            rows += [
                _row(exp, s, 3, method, "h_0", est.h[0]),
                _row(exp, s, 3, method, "h_1", est.h[1]),
                _row(exp, s, 3, method, "J_01", est.J[0]),
                _row(exp, s, 3, method, "param_error", float(np.max(np.abs(est.params - truth.params)))),
            ]
    return rows


# --- registry -----------------------------------------------------------------------

_FIT_DEFAULTS = {"offsets": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], "n": 100000, "seeds": 20, "master_seed": 42, "grid_n": 8192}

EXPERIMENTS: dict[str, ExperimentSpec] = {
    "bimodal_cut": ExperimentSpec(run_bimodal_cut, dict(_FIT_DEFAULTS), "offsets, n, seeds, master_seed, grid_n"),
    "bimodal_nocut": ExperimentSpec(run_bimodal_nocut, dict(_FIT_DEFAULTS), "offsets, n, seeds, master_seed, grid_n"),
    "oscillating": ExperimentSpec(
        run_oscillating,
        {"omegas": [1.0, 2.0, 4.0, 8.0, 16.0, 32.0], "n": 100000, "seeds": 20, "master_seed": 42, "grid_n": 8192},
        "omegas, n, seeds (0 skips sampling), master_seed, grid_n",
    ),
    "neural_bimodal": ExperimentSpec(
        run_neural_bimodal,
        {"offsets": [2.0, 4.0, 6.0], "seeds": 10, "width": 256, "steps": 30000, "batch": 64, "step_size": 1e-3, "master_seed": 42, "grid_n": 8192},
        "offsets, seeds, width, steps, batch, step_size, master_seed, grid_n",
    ),
    "functional_sweep": ExperimentSpec(run_functional_sweep, {"grid_n": 8192}, "grid_n"),
    "discrete_suite": ExperimentSpec(
        run_discrete_suite,
        {"instances": 100, "restarts": 5, "seeds": 5, "n": 100000, "master_seed": 42},
        "instances, restarts, seeds, n, master_seed",
    ),
    "rademacher_gaussian": ExperimentSpec(
        run_rademacher_gaussian,
        {"cases": [[1.0, 1, 100], [2.0, 5, 400]], "reps": 200, "master_seed": 42},
        "cases as [R, d, n] triples, reps, master_seed",
    ),
    "appendix_lyu": ExperimentSpec(run_appendix_lyu, {"grid_n": 8192, "t0": 1e-3}, "grid_n, t0"),
}


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    cfg = cfg.resolved()
    return canonical_order(EXPERIMENTS[cfg.experiment].runner(cfg.params))


# --- emission -------------------------------------------------------------------------


class EmitError(OSError):
    pass


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    if not rows:
        raise ValueError("refusing to emit an empty result set")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in canonical_order(rows):
        w.writerow([r.experiment, r.seed, _fmt(r.param), r.method, r.metric, _fmt(r.value)])
    return buf.getvalue()


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        return [ResultRow(e, int(s), float(p), m, k, float(v)) for e, s, p, m, k, v in reader]


def _write(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc}") from exc
    return path


def emit_csv(rows: Sequence[ResultRow], path) -> Path:
    return _write(path, rows_to_csv(rows))


@dataclass(frozen=True)
class PlotSpec:
    metric: str
    title: str = ""
    x_label: str = "param"
    y_label: str = ""
    log_y: bool = False
    methods: Optional[tuple] = None


def plot_series(rows: Sequence[ResultRow], spec: PlotSpec) -> dict[str, list[tuple[float, float]]]:
    """Per method, (param, median over seeds of the metric), skipping non-finite values."""
    groups: dict[str, dict[float, list]] = {}
    for r in rows:
        if r.metric != spec.metric or (spec.methods and r.method not in spec.methods):
            continue
        if math.isfinite(r.value) and (r.value > 0 or not spec.log_y):
            groups.setdefault(r.method, {}).setdefault(r.param, []).append(r.value)
    return {m: [(x, float(np.median(v))) for x, v in sorted(pts.items())] for m, pts in sorted(groups.items())}


_COLORS = ("#c0392b", "#2471a3", "#229954", "#7d3c98", "#b7950b")


def render_svg(rows: Sequence[ResultRow], spec: PlotSpec, width: int = 480, height: int = 320) -> str:
    series = plot_series(rows, spec)
    if not series:
        raise ValueError(f"no finite values for metric {spec.metric!r}")
    tf = (lambda v: math.log10(v)) if spec.log_y else (lambda v: v)
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [tf(y) for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    ml, mr, mt, mb = 60, 100, 30, 40
    px = lambda x: ml + (x - x0) / (x1 - x0) * (width - ml - mr)
    py = lambda y: height - mb - (y - y0) / (y1 - y0) * (height - mt - mb)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{spec.title or spec.metric}</text>',
        f'<text x="{(ml + width - mr) / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="11">{spec.x_label}</text>',
        f'<text x="12" y="{mt - 8}" font-size="11">{(spec.y_label or spec.metric) + (" (log10)" if spec.log_y else "")}</text>',
    ]
    for v, anchor_x in ((x0, px(x0)), (x1, px(x1))):
        out.append(f'<text x="{anchor_x:.1f}" y="{height - mb + 14}" text-anchor="middle" font-size="10">{v:.4g}</text>')
    for v in (y0, y1):
        out.append(f'<text x="{ml - 4}" y="{py(v) + 3:.1f}" text-anchor="end" font-size="10">{v:.4g}</text>')
    for i, (method, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(tf(y)):.2f}" for x, y in pts)
        out.append(f'<g class="series" id="{method}">')
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(tf(y)):.2f}" r="2.5" fill="{color}"/>')
        out.append("</g>")
        ly = mt + 14 * i
        out.append(f'<text x="{width - mr + 8}" y="{ly + 4}" font-size="11" fill="{color}">{method}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg(rows: Sequence[ResultRow], spec: PlotSpec, path) -> Path:
    if not rows:
        raise ValueError("refusing to plot an empty result set")
    return _write(path, render_svg(rows, spec))


DEFAULT_PLOTS: dict[str, list[PlotSpec]] = {
    "bimodal_cut": [PlotSpec("log10_error", "parameter error, cut family", "offset a", "median log10 error", methods=("sm", "mle"))],
    "bimodal_nocut": [PlotSpec("log10_error", "parameter error, no cut", "offset a", "median log10 error", methods=("sm", "mle"))],
    "oscillating": [
        PlotSpec("gamma_sm_norm", "asymptotic covariance norm", "omega", log_y=True),
        PlotSpec("gamma_mle_norm", "asymptotic covariance norm (MLE)", "omega", log_y=True),
    ],
    "neural_bimodal": [PlotSpec("log_mode_ratio", "log mode-weight ratio", "offset a")],
}


def write_outputs(experiment: str, rows: Sequence[ResultRow], out_dir) -> list[Path]:
    out = Path(out_dir)
    paths = [emit_csv(rows, out / f"{experiment}.csv")]
    for i, spec in enumerate(DEFAULT_PLOTS.get(experiment, [])):
        try:
            paths.append(emit_svg(rows, spec, out / f"{experiment}_{i}_{spec.metric}.svg"))
        except ValueError as exc:
            log.warning("skipping plot %s: %s", spec.metric, exc)
    return paths
