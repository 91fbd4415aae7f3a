"""Monte Carlo study: replicate the four scenarios across estimation pipelines.

One replication generates a dataset, masks it, imputes the covariates with
and without the outcome, and runs every requested method. ``run_study``
aggregates replications into bias x 100, empirical variance (absolute and
relative to the full-data fit), mean estimated variance x 100 and 95% coverage.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ._rng import child, make_rng
from .imputation import ChainConfig, chained_impute, default_specs, multinomial_select
from .models import OutcomeSpec, fit_table, log_density
from .simulate import DEFAULT_PHI, TRUE_EFFECTS, apply_missingness, generate_scenario, scenario_mechanisms
from .stacking import complete_case_fit, compute_weights, fit_stacked, stack, unit_mi_weights
from .table import Column, Table
from .variance import Z975, model_variance, rubin_from_fits, variance_report

log = logging.getLogger(__name__)

METHODS = (
    "full-data",
    "complete-case",
    "mice-with-y-rubin",
    "mice-with-y-stacked-1/M",
    "mice-without-y-rubin",
    "proposed-stacked-weighted",
    "proposed-stacked-weighted-draw",
    "mice-multinomial",
)
STACKED_METHODS = ("mice-with-y-stacked-1/M", "proposed-stacked-weighted", "proposed-stacked-weighted-draw")
RUBIN_METHODS = ("mice-with-y-rubin", "mice-without-y-rubin", "mice-multinomial")

REPORT_FIELDS = ("scenario", "mechanism", "method", "variance_method", "coefficient", "bias_x100",
                 "emp_var", "rel_emp_var", "mean_est_var_x100", "coverage_pct", "n_fail")


def scenario_outcome(scenario: int) -> OutcomeSpec:
    if scenario in (1, 3):
        terms = ("x1", "x2") if scenario == 1 else ("x1", "x2", "x1:x2")
        return OutcomeSpec("gaussian-identity", ("y",), terms)
    if scenario == 2:
        return OutcomeSpec("bernoulli-logit", ("y",), ("x1", "x2", "x3"))
    return OutcomeSpec("cox-ph", ("time", "event"), ("x1", "x2"))


@dataclass(frozen=True)
class StudyConfig:
    scenario: int
    phi: tuple = ()  # mechanisms; empty means the scenario's MCAR setting
    R: int = 500
    n: int = 2000
    M: int = 50
    cycles: int = 10
    methods: tuple = METHODS
    variance: tuple = ("louis",)
    stack_mode: str = "tall"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.scenario not in TRUE_EFFECTS:
            raise ValueError(f"invalid scenario {self.scenario!r}")
        if self.R < 1:
            raise ValueError("R must be at least 1")
        phi = tuple(tuple(float(v) for v in p) for p in self.phi) or (tuple(map(float, DEFAULT_PHI[self.scenario][0])),)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "variance", tuple(self.variance))
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        bad = set(self.variance) - {"louis", "sandwich", "sandwich-cluster", "wood", "model"}
        if bad:
            raise ValueError(f"unknown stacked variance methods {sorted(bad)}")


def mechanism_label(phi) -> str:
    return "phi=(" + ",".join(f"{v:g}" for v in phi) + ")"


def variance_methods_for(method: str, cfg: StudyConfig) -> tuple:
    if method in ("full-data", "complete-case"):
        return ("model",)
    if method in RUBIN_METHODS:
        return ("rubin",)
    return cfg.variance


@dataclass
class MethodResult:
    estimates: Optional[np.ndarray] = None  # reported coefficients, in TRUE_EFFECTS order
    se: dict = field(default_factory=dict)  # variance method -> standard errors
    error: Optional[str] = None


def nelson_aalen(time, event) -> np.ndarray:
    """Marginal Nelson-Aalen cumulative hazard evaluated at each subject's own time."""
    order = np.argsort(time, kind="stable")
    ts = time[order]
    uniq, start, counts = np.unique(ts, return_index=True, return_counts=True)
    d = np.add.reduceat(event[order], start)
    at_risk = len(time) - start
    H = np.cumsum(d / at_risk)
    return H[np.searchsorted(uniq, time)]


def _with_outcome_table(tab: Table, scenario: int) -> tuple[Table, tuple]:
    """Table and outcome-column list used by the 'MICE with Y' imputers."""
    if scenario == 4:
        H = nelson_aalen(tab.col("time"), tab.col("event"))
        return tab.with_column(Column("cumhaz"), H), ("time", "event", "cumhaz")
    return tab, ("y",)


def _pick(names, params, coefs):
    return np.array([params[names.index(c)] for c in coefs])


def _rubin_result(tables, spec, coefs) -> MethodResult:
    fits = [fit_table(t, spec) for t in tables]
    rep = rubin_from_fits(fits)
    return MethodResult(_pick(rep.names, rep.params, coefs), {"rubin": _pick(rep.names, rep.se, coefs)})


def _stacked_result(s, spec, coefs, vmethods) -> MethodResult:
    fit = fit_stacked(s, spec)
    res = MethodResult(_pick(fit.names, fit.params, coefs))
    for vm in vmethods:
        rep = variance_report(vm, s, fit)
        res.se[vm] = _pick(rep.names, rep.se, coefs)
    return res


def run_replication(cfg: StudyConfig, rep: int, mechanism: int = 0) -> dict:
    """One seeded replication under mechanism index ``mechanism``; returns {method: MethodResult}.

    Data are generated from a stream shared by all mechanisms, so mechanisms
    are compared on the same draws.
    """
    sc = cfg.scenario
    spec = scenario_outcome(sc)
    coefs = list(TRUE_EFFECTS[sc])
    outcome_cols = spec.response
    full = generate_scenario(sc, cfg.n, child(cfg.seed, 0, rep))
    tab = apply_missingness(full, scenario_mechanisms(sc, cfg.phi[mechanism]), child(cfg.seed, 1, rep, mechanism))
    base = child(cfg.seed, 2, rep, mechanism)
    out = {}

    def attempt(name, fn):
        if name not in cfg.methods:
            return
        try:
            out[name] = fn()
        except Exception as exc:  # a failing method must not sink the replication
            log.debug("replication %d method %s failed: %s", rep, name, exc)
            out[name] = MethodResult(error=f"{type(exc).__name__}: {exc}")

    def full_data():
        fit = fit_table(full, spec)
        return MethodResult(_pick(fit.names, fit.params, coefs), {"model": _pick(fit.names, model_variance(fit).se, coefs)})

    attempt("full-data", full_data)

    cc_holder = {}

    def get_cc():
        if "cc" not in cc_holder:
            cc_holder["cc"] = complete_case_fit(tab, spec)
        return cc_holder["cc"]

    def complete_case():
        fit = get_cc().fit
        return MethodResult(_pick(fit.names, fit.params, coefs), {"model": _pick(fit.names, model_variance(fit).se, coefs)})

    attempt("complete-case", complete_case)

    imps = {}

    def without_y():
        if "without" not in imps:
            specs = default_specs(tab, outcome_cols)
            imps["without"] = chained_impute(tab, specs, ChainConfig(cfg.M, cfg.cycles, seed=child(base, 0)),
                                             outcome=outcome_cols)
        return imps["without"]

    def with_y():
        if "with" not in imps:
            t2, ocols = _with_outcome_table(tab, sc)
            specs = default_specs(t2, ocols, with_outcome=True)
            imps["with"] = chained_impute(t2, specs, ChainConfig(cfg.M, cfg.cycles, seed=child(base, 1)),
                                          outcome=ocols, allow_outcome_predictors=True)
        return imps["with"]

    attempt("mice-with-y-rubin", lambda: _rubin_result(with_y(), spec, coefs))
    attempt("mice-with-y-stacked-1/M", lambda: _stacked_result(
        unit_mi_weights(stack(with_y(), cfg.stack_mode)), spec, coefs, cfg.variance))
    attempt("mice-without-y-rubin", lambda: _rubin_result(without_y(), spec, coefs))

    stacked = {}

    def without_stack():
        if "s" not in stacked:
            stacked["s"] = stack(without_y(), cfg.stack_mode)
        return stacked["s"]

    attempt("proposed-stacked-weighted", lambda: _stacked_result(
        compute_weights(without_stack(), get_cc(), spec, "mle"), spec, coefs, cfg.variance))
    attempt("proposed-stacked-weighted-draw", lambda: _stacked_result(
        compute_weights(without_stack(), get_cc(), spec, "draw", seed=child(base, 2)), spec, coefs, cfg.variance))

    def multinomial():
        tables = without_y()
        cc = get_cc()
        logd = np.column_stack([log_density(spec, cc.params, t.values, t.columns, cc.dispersion, cc.baseline)
                                for t in tables])
        rng = make_rng(child(base, 3))
        idx = np.arange(tab.n)
        V = np.stack([t.values for t in tables])  # (M, n, p)
        selected = []
        for _ in range(cfg.M):
            pick = multinomial_select(logd, rng, log=True)
            selected.append(tables[0].replace(values=V[pick, idx]))
        return _rubin_result(selected, spec, coefs)

    attempt("mice-multinomial", multinomial)
    return out


def _job(args):
    cfg, rep, mech = args
    with threadpool_limits(1):
        return run_replication(cfg, rep, mech)


@dataclass
class StudyReport:
    config: StudyConfig
    rows: list  # dicts keyed by REPORT_FIELDS
    n_replications: int
    failures: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in self.rows:
            w.writerow([_fmt(r[k]) for k in REPORT_FIELDS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def to_text(self) -> str:
        head = ("mechanism", "method", "variance", "coef", "bias x100", "emp var", "rel var",
                "est var x100", "cover %", "fail")
        body = [(r["mechanism"], r["method"], r["variance_method"], r["coefficient"],
                 f"{r['bias_x100']:.2f}", f"{r['emp_var']:.5f}", f"{r['rel_emp_var']:.2f}",
                 f"{r['mean_est_var_x100']:.3f}", f"{r['coverage_pct']:.1f}", str(r["n_fail"]))
                for r in self.rows]
        widths = [max(len(h), *(len(b[k]) for b in body)) if body else len(h) for k, h in enumerate(head)]
        lines = [f"Scenario {self.config.scenario}: R={self.n_replications}, n={self.config.n}, M={self.config.M}",
                 "  ".join(h.ljust(wd) for h, wd in zip(head, widths)),
                 "  ".join("-" * wd for wd in widths)]
        lines += ["  ".join(c.ljust(wd) for c, wd in zip(b, widths)) for b in body]
        return "\n".join(lines) + "\n"

    def lookup(self, mechanism=None, method=None, variance_method=None, coefficient=None) -> list:
        out = []
        for r in self.rows:
            if mechanism is not None and r["mechanism"] != (mechanism if isinstance(mechanism, str) else mechanism_label(mechanism)):
                continue
            if method is not None and r["method"] != method:
                continue
            if variance_method is not None and r["variance_method"] != variance_method:
                continue
            if coefficient is not None and r["coefficient"] != coefficient:
                continue
            out.append(r)
        return out

    def get(self, **kw) -> dict:
        rows = self.lookup(**kw)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {kw}")
        return rows[0]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def aggregate(cfg: StudyConfig, results: Sequence[Sequence[dict]]) -> StudyReport:
    """``results[k][r]`` is replication r under mechanism k."""
    truth = TRUE_EFFECTS[cfg.scenario]
    coefs = list(truth)
    tvec = np.array([truth[c] for c in coefs])
    rows = []
    failures = {}
    for k, phi in enumerate(cfg.phi):
        label = mechanism_label(phi)
        reps = results[k]
        full_var = None
        if "full-data" in cfg.methods:
            est = np.array([r["full-data"].estimates for r in reps if r["full-data"].error is None])
            if len(est) > 1:
                full_var = est.var(axis=0, ddof=1)
        for method in cfg.methods:
            ok = [r[method] for r in reps if r[method].error is None]
            n_fail = len(reps) - len(ok)
            failures[(label, method)] = n_fail
            if ok:
                est = np.array([m.estimates for m in ok])
                bias = (est.mean(axis=0) - tvec) * 100
                emp = est.var(axis=0, ddof=1) if len(ok) > 1 else np.full(len(coefs), np.nan)
            else:
                est = np.empty((0, len(coefs)))
                bias = emp = np.full(len(coefs), np.nan)
            rel = emp / full_var if full_var is not None else np.full(len(coefs), np.nan)
            for vm in variance_methods_for(method, cfg):
                if ok:
                    se = np.array([m.se[vm] for m in ok])
                    mev = (se**2).mean(axis=0) * 100
                    cover = (np.abs(est - tvec) <= Z975 * se).mean(axis=0) * 100
                else:
                    mev = cover = np.full(len(coefs), np.nan)
                for j, c in enumerate(coefs):
                    rows.append(dict(scenario=cfg.scenario, mechanism=label, method=method, variance_method=vm,
                                     coefficient=c, bias_x100=float(bias[j]), emp_var=float(emp[j]),
                                     rel_emp_var=float(rel[j]), mean_est_var_x100=float(mev[j]),
                                     coverage_pct=float(cover[j]), n_fail=n_fail))
    return StudyReport(cfg, rows, cfg.R, failures)


def run_study(cfg: StudyConfig, progress: bool = False) -> StudyReport:
    jobs = [(cfg, r, k) for k in range(len(cfg.phi)) for r in range(cfg.R)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            flat = list(ex.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.threads))))
    else:
        flat = []
        with threadpool_limits(1):
            for i, j in enumerate(jobs):
                flat.append(run_replication(*j))
                if progress and (i + 1) % 10 == 0:
                    log.info("replication %d/%d", i + 1, len(jobs))
    results = [flat[k * cfg.R:(k + 1) * cfg.R] for k in range(len(cfg.phi))]
    return aggregate(cfg, results)
