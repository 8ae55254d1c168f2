"""The acceptance suite behind ``smlab check``.

Each criterion returns a pass flag, a one-line detail and the result rows
it was judged on; the rows are written as CSV so reruns can be compared
byte for byte.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import asymptotics, discrete, experiments, functional
from .estimators import score_matching_fit
from .experiments import NO_SEED, ExperimentConfig, ResultRow, _row, rows_to_csv, run_experiment
from .expfam import catalog_model, default_models
from .numerics import RngStream

MASTER_SEED = 42


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    rows: list = field(default_factory=list)
    seconds: float = 0.0

    def line(self) -> str:
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _median(rows, param, method, metric) -> float:
    vals = [r.value for r in rows if r.param == param and r.method == method and r.metric == metric]
    vals = [v for v in vals if math.isfinite(v)]
    return float(np.median(vals)) if vals else float("nan")


def _value(rows, param, method, metric) -> float:
    for r in rows:
        if r.param == param and r.method == method and r.metric == metric:
            return r.value
    raise KeyError((param, method, metric))


def crit_consistency():
    rows, worst = [], 0.0
    for k, m in enumerate(default_models()):
        res = float(np.linalg.norm(m.consistency_residual()))
        worst = max(worst, res)
        rows.append(_row("acceptance", NO_SEED, k, "sm", "consistency_residual", res))
    return worst < 1e-6, f"max ||A theta + E lap F|| = {worst:.2e} (< 1e-6)", rows


def crit_normality(reps: int = 400, n: int = 100_000):
    model = catalog_model("bimodal_quartic", a=1.0)
    g = asymptotics.gamma_sm(model)
    z = np.empty((reps, model.stat.m))
    for r in range(reps):
        x = model.sample(RngStream(MASTER_SEED, r).child(100), n)
        z[r] = np.sqrt(n) * (score_matching_fit(model.stat, x).theta_hat - model.theta)
    emp = np.atleast_2d(np.cov(z.T))
    rel = float(np.linalg.norm(emp - g) / np.linalg.norm(g))
    rows = [_row("acceptance", NO_SEED, 2, "sm", "mc_frobenius_rel", rel)]
    return rel <= 0.15, f"replicate covariance vs Gamma_SM relative Frobenius error {rel:.3f} (<= 0.15)", rows


def crit_poincare_bound():
    rows, bad = [], []
    for k, m in enumerate(default_models()):
        c_r = asymptotics.restricted_poincare(m)
        chk = asymptotics.poincare_bound_check(m, c_r)
        rows += [
            _row("acceptance", NO_SEED, k, "sm", "poincare_lhs", chk.lhs),
            _row("acceptance", NO_SEED, k, "sm", "poincare_rhs", chk.rhs),
        ]
        if not chk.holds:
            bad.append(m.stat.name)
    return not bad, f"{len(bad)} violations over {k + 1} catalog families", rows


def crit_cut_scaling():
    rows, ratios = [], []
    for a in range(1, 8):
        r = asymptotics.asymptotic_report(catalog_model("bimodal_with_cut", a=float(a))).worst_ratio
        ratios.append(r)
        rows.append(_row("acceptance", NO_SEED, a, "sm", "worst_ratio", r))
    increasing = all(b > a for a, b in zip(ratios, ratios[1:]))
    z = np.array([a * a / 8 for a in range(3, 8)])
    slope = float(np.polyfit(z, np.log(ratios[2:]), 1)[0])
    return increasing and slope >= 0.8, f"strictly increasing={increasing}, slope vs a^2/8 = {slope:.2f} (>= 0.8)", rows


def crit_cut_family():
    rows = run_experiment(ExperimentConfig("bimodal_cut", {"master_seed": MASTER_SEED}))
    r7 = _median(rows, 7.0, "sm", "log10_error") - _median(rows, 7.0, "mle", "log10_error")
    r1 = _median(rows, 1.0, "sm", "log10_error") - _median(rows, 1.0, "mle", "log10_error")
    ok = 10**r7 >= 30 and 10**r1 <= 3
    return ok, f"median SM/MLE error ratio a=7: {10**r7:.3g} (>= 30), a=1: {10**r1:.3g} (<= 3)", rows


def crit_no_cut():
    rows = run_experiment(ExperimentConfig("bimodal_nocut", {"master_seed": MASTER_SEED}))
    ratios = [10 ** (_median(rows, a, "sm", "log10_error") - _median(rows, a, "mle", "log10_error")) for a in range(1, 8)]
    c_r = max(_value(rows, float(a), "na", "c_p_restricted") for a in range(1, 8))
    ok = max(ratios) <= 3 and c_r <= 10
    return ok, f"max median SM/MLE ratio {max(ratios):.3g} (<= 3), max restricted C_P {c_r:.3g} (<= 10)", rows


def crit_oscillating():
    rows = run_experiment(ExperimentConfig("oscillating", {"seeds": 0}))
    omegas = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    mle = [_value(rows, w, "mle", "gamma_mle_norm") for w in omegas]
    sm_ratio = _value(rows, 32.0, "sm", "gamma_sm_norm") / _value(rows, 2.0, "sm", "gamma_sm_norm")
    lap = [_value(rows, w, "na", "e_lap2") for w in (8.0, 16.0, 32.0)]
    slope = float(np.polyfit(np.log([8.0, 16.0, 32.0]), np.log(lap), 1)[0])
    spread = max(mle) / min(mle)
    ok = spread < 2 and sm_ratio >= 100 and abs(slope - 4) <= 0.3
    detail = f"MLE norm spread {spread:.3f} (< 2), SM norm ratio 32/2 = {sm_ratio:.1f} (>= 100), E||lap F||^2 slope {slope:.3f} (4 +- 0.3)"
    return ok, detail, rows


def crit_rademacher():
    rows = run_experiment(ExperimentConfig("rademacher_gaussian", {"master_seed": MASTER_SEED}))
    parts, ok = [], True
    for k in (0.0, 1.0):
        kl, bound = _value(rows, k, "sm", "empirical_kl"), _value(rows, k, "sm", "bound")
        ok &= kl <= bound
        parts.append(f"{kl:.4f} <= {bound:.4f}")
    return ok, "empirical KL vs bound: " + ", ".join(parts), rows


def crit_functional_chain():
    rows = run_experiment(ExperimentConfig("functional_sweep"))
    g, ld = experiments._gaussian_density(1.0, 8192)
    c_p = functional.poincare_spectral(g, ld)
    lo, hi = functional.log_sobolev_bg(g, ld)
    chain = True
    for param in sorted({r.param for r in rows if r.metric == "c_p"}):
        v = {m: _value(rows, param, "na", m) for m in ("c_p", "c_ls_upper", "c_is")}
        s = 1 + functional.CHAIN_SLACK
        chain &= v["c_p"] <= 2 * v["c_ls_upper"] * s and v["c_p"] <= 4 * v["c_is"] ** 2 * s
    ok = abs(c_p - 1) <= 0.01 and lo <= 0.5 <= hi and chain
    return ok, f"normal c_p = {c_p:.4f}, C_LS bracket [{lo:.3g}, {hi:.3g}], chain holds on all densities: {chain}", rows


def crit_lyu():
    rows = run_experiment(ExperimentConfig("appendix_lyu"))
    rel = []
    for k in (0.0, 1.0):
        lhs, rhs = _value(rows, k, "na", "lhs_deriv"), _value(rows, k, "na", "rhs_deriv")
        rel.append(abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    return max(rel) < 1e-2, "relative gaps " + ", ".join(f"{r:.2e}" for r in rel) + " (< 1e-2)", rows


def crit_discrete():
    rows = run_experiment(ExperimentConfig("discrete_suite", {"master_seed": MASTER_SEED}))
    rm = _value(rows, 0.0, "rm", "rm_identity_error")
    pl = _value(rows, 0.0, "pl", "pl_identity_error")
    c_prod = _value(rows, 1.0, "pl", "c_at_lower")
    fit_err = max(r.value for r in rows if r.metric == "param_error")
    fit_fail = any(r.metric == "error" for r in rows)
    ok = rm <= 1e-12 and pl <= 1e-12 and 0.99 <= c_prod <= 1 + 1e-6 and fit_err <= 0.08 and not fit_fail
    detail = f"(a) {rm:.1e} (b) {pl:.1e} (c) product C_AT {c_prod:.6f} (d) max param error {fit_err:.3f}"
    return ok, detail, rows


def crit_neural():
    rows = run_experiment(ExperimentConfig("neural_bimodal", {"offsets": [2.0, 6.0], "master_seed": MASTER_SEED}))
    tv2 = [r.value for r in rows if r.param == 2.0 and r.metric == "tv"]
    lw6 = [r.value for r in rows if r.param == 6.0 and r.metric == "log_mode_ratio"]
    se6 = [r.value for r in rows if r.param == 6.0 and r.metric == "mode_score_error"]
    good2 = sum(v < 0.1 for v in tv2)
    bad6 = sum(abs(v) >= math.log(2) for v in lw6)
    shape = bool(se6) and max(se6) < 0.5
    ok = good2 >= 7 and bad6 >= 7 and shape
    detail = (
        f"a=2 TV < 0.1 in {good2}/10, a=6 |log w| >= log 2 in {bad6}/10 "
        f"(max |log w| {max(map(abs, lw6)) if lw6 else float('nan'):.3f}), a=6 max mode score error "
        f"{max(se6) if se6 else float('nan'):.3f} (< 0.5)"
    )
    return ok, detail, rows


CRITERIA: list[tuple[int, str, Callable]] = [
    (1, "consistency identity", crit_consistency),
    (2, "asymptotic normality", crit_normality),
    (3, "Poincare bound", crit_poincare_bound),
    (4, "cut scaling", crit_cut_scaling),
    (5, "cut family errors", crit_cut_family),
    (6, "no-cut errors", crit_no_cut),
    (7, "oscillating statistic", crit_oscillating),
    (8, "Gaussian finite-sample bound", crit_rademacher),
    (9, "functional-constant chain", crit_functional_chain),
    (10, "heat-flow equivalence", crit_lyu),
    (11, "discrete suite", crit_discrete),
    (12, "neural mode weights", crit_neural),
]


def run_criteria(out_dir, only: Optional[set] = None, echo: Optional[Callable[[str], None]] = None) -> list[CriterionResult]:
    out = Path(out_dir)
    results = []
    for number, name, fn in CRITERIA:
        if only and number not in only:
            continue
        t = time.perf_counter()
        try:
            passed, detail, rows = fn()
        except Exception as exc:
            passed, detail, rows = False, f"raised {type(exc).__name__}: {exc}", []
        res = CriterionResult(number, name, bool(passed), detail, rows, time.perf_counter() - t)
        if rows:
            experiments._write(out / f"criterion_{number:02d}.csv", rows_to_csv(rows))
        if echo:
            echo(res.line())
        results.append(res)
    return results


def csv_snapshot(out_dir) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(Path(out_dir).glob("*.csv"))}


def run_check(out_dir, echo: Optional[Callable[[str], None]] = None, repeat: bool = True) -> list[CriterionResult]:
    """All criteria; with ``repeat`` the suite runs a second time into a scratch
    directory and criterion 13 compares the CSV bytes of the two runs."""
    results = run_criteria(out_dir, echo=echo)
    if repeat:
        t = time.perf_counter()
        with tempfile.TemporaryDirectory() as scratch:
            run_criteria(scratch)
            first, second = csv_snapshot(out_dir), csv_snapshot(scratch)
        same = first == second and bool(first)
        differing = sorted(k for k in set(first) | set(second) if first.get(k) != second.get(k))
        detail = f"{len(first)} CSV files byte-identical across two runs" if same else f"differing files: {differing}"
        res = CriterionResult(13, "determinism", same, detail, [], time.perf_counter() - t)
        if echo:
            echo(res.line())
        results.append(res)
    return results
