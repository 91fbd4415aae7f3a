"""Command-line entry point: ``stackmi simulate|impute|analyze --config FILE [--out DIR]``.

Exit status: 0 on success, 1 for a malformed config or a failed command,
2 when a simulation's per-method failure rate exceeds ``failure_threshold``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._rng import child, make_rng
from .config import ConfigError, RunConfig, load_config
from .imputation import ChainConfig, ImputationError, chained_impute, default_specs, impute_outcome
from .models import ConvergenceError, fit_table
from .stacking import (StackedTable, complete_case_fit, compute_weights, fit_stacked, stack,
                       unit_mi_weights)
from .study import run_study
from .table import OUTCOME_ROLES, Column, Table, TableError, load_csv, write_csv
from .variance import rubin_from_fits, variance_report, write_reports

log = logging.getLogger("stackmi")


class CommandError(RuntimeError):
    pass


# seeds for the independent random stages of impute/analyze
_IMPUTE, _OUTCOME, _WEIGHTS = 0, 1, 2


def cmd_simulate(config, out=".") -> int:
    cfg = load_config(config)
    if cfg.study is None:
        raise ConfigError(f"{cfg.path}: missing [simulate] section with a 'scenario' key")
    report = run_study(cfg.study)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "study_report.csv")
    (out / "study_report.txt").write_text(report.to_text(), encoding="utf-8")
    worst = max(report.failures.values(), default=0) / report.n_replications
    if worst > cfg.failure_threshold:
        log.error("method failure rate %.3f exceeds threshold %.3f", worst, cfg.failure_threshold)
        for (mech, method), k in sorted(report.failures.items()):
            if k:
                log.error("  %s %s: %d of %d replications failed", mech, method, k, report.n_replications)
        return 2
    return 0


def _schema(cfg: RunConfig):
    if not cfg.columns:
        raise ConfigError(f"{cfg.path}: no [column] blocks; a schema is required")
    return cfg.columns


def _outcome_columns(cfg: RunConfig) -> tuple:
    cols = set(cfg.outcome.response) if cfg.outcome else set()
    cols |= {c.name for c in cfg.columns if c.role in OUTCOME_ROLES}
    return tuple(c.name for c in cfg.columns if c.name in cols)


def _read_data(cfg: RunConfig, data) -> Table:
    path = Path(data) if data is not None else cfg.data
    if path is None:
        raise ConfigError(f"{cfg.path}: no input data (pass a file or set [run] data)")
    return load_csv(path, _schema(cfg), cfg.na)


def impute_table(cfg: RunConfig, table: Table) -> list[Table]:
    """Covariate imputation plus, for incomplete outcomes, draws from the complete-case outcome model."""
    outcome = _outcome_columns(cfg)
    given = {s.target for s in cfg.imputers}
    specs = list(cfg.imputers) + [s for s in default_specs(table, outcome) if s.target not in given]
    chain = ChainConfig(cfg.M, cfg.cycles, seed=child(cfg.seed, _IMPUTE))
    try:
        tables = chained_impute(table, specs, chain, outcome=outcome)
    except (ImputationError, TableError, np.linalg.LinAlgError) as exc:
        raise CommandError(f"imputation failed: {exc}") from None
    if cfg.outcome is not None and not table.complete_rows(cfg.outcome.response).all():
        cc = complete_case_fit(table, cfg.outcome)
        filled = []
        for m, t in enumerate(tables):
            # one parameter draw per imputation keeps outcome imputation proper
            theta, s2 = cc.draw(make_rng(child(cfg.seed, _OUTCOME, m, 0)))
            filled.append(impute_outcome(t, cfg.outcome, theta, child(cfg.seed, _OUTCOME, m, 1),
                                         dispersion=s2 if s2 is not None else cc.dispersion))
        tables = filled
    return tables


def weigh(cfg: RunConfig, s: StackedTable, table: Table) -> StackedTable:
    if cfg.weights == "unit-1/M":
        return unit_mi_weights(s)
    if cfg.outcome is None:
        raise ConfigError(f"{cfg.path}: weight mode {cfg.weights!r} needs an [outcome] block")
    cc = complete_case_fit(table, cfg.outcome)
    return compute_weights(s, cc, cfg.outcome, cfg.weights, seed=child(cfg.seed, _WEIGHTS))


def _fmt_int(v):
    return str(int(v))


def _fmt_float(v):
    return repr(float(v))


def write_stacked(path, s: StackedTable) -> None:
    extra = {"_subject": (s.subject + 1, _fmt_int), "_imp": (_file_imp(s), _fmt_int)}
    if s.weights is not None:
        extra["_weight"] = (s.weights, _fmt_float)
    write_csv(path, Table(s.columns, s.values), extra=extra)


def _file_imp(s: StackedTable) -> np.ndarray:
    """1-based imputation index; 0 marks a short-stack row shared by every imputation."""
    if s.mode == "short":
        return np.where(s.complete, 0, s.imp + 1)
    return s.imp + 1


def cmd_impute(config, data=None, out=".") -> int:
    cfg = load_config(config)
    table = _read_data(cfg, data)
    tables = impute_table(cfg, table)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.output == "separate":
        width = max(3, len(str(cfg.M)))
        for m, t in enumerate(tables, start=1):
            write_csv(out / f"imp_{m:0{width}d}.csv", t, cfg.na)
        return 0
    s = stack(tables, cfg.stack)
    if cfg.outcome is not None:
        s = weigh(cfg, s, table)
    write_stacked(out / "stacked.csv", s)
    return 0


def read_stacked(path, original: Table) -> tuple[StackedTable, Optional[np.ndarray]]:
    """Rebuild a stacked table from ``stacked.csv``; returns it with any stored weights."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None or header[:2] != ["_subject", "_imp"]:
        raise TableError(f"{path}: stacked file must start with _subject,_imp columns")
    has_w = len(header) > 2 and header[2] == "_weight"
    lead = [Column("_subject"), Column("_imp")] + ([Column("_weight")] if has_w else [])
    raw = load_csv(path, lead + list(original.columns))
    if not raw.mask.all():
        raise TableError(f"{path}: stacked file has missing cells")
    k = len(lead)
    subject = raw.values[:, 0].astype(int) - 1
    file_imp = raw.values[:, 1].astype(int)
    if subject.min(initial=0) < 0 or subject.max(initial=-1) >= original.n:
        raise TableError(f"{path}: _subject outside 1..{original.n}")
    values = raw.values[:, k:]
    src = original.mask[subject]
    if not np.array_equal(values[src], original.values[subject][src]):
        raise TableError(f"{path}: observed cells differ from the original data")
    imputed_cells = ~src
    complete = ~imputed_cells.any(axis=1)
    short = bool((file_imp == 0).any())
    M = int(file_imp.max())
    s = StackedTable(columns=original.columns, values=values, subject=subject,
                     imp=np.maximum(file_imp - 1, 0), complete=complete, imputed_cells=imputed_cells,
                     M=M, n_subjects=original.n, mode="short" if short else "tall")
    return s, (raw.values[:, 2] if has_w else None)


def read_imputations(paths: Sequence, original: Table) -> list[Table]:
    tables = []
    for p in paths:
        t = load_csv(p, original.columns)
        if not t.mask.all():
            raise TableError(f"{p}: imputed file has missing cells")
        if t.n != original.n:
            raise TableError(f"{p}: {t.n} rows, expected {original.n}")
        tables.append(Table(t.columns, t.values, imputed=~original.mask))
    return tables


def analyze(cfg: RunConfig, original: Table, inputs: Sequence) -> list:
    """Weighted stacked fit plus the configured variance reports."""
    if cfg.outcome is None:
        raise ConfigError(f"{cfg.path}: analyze needs an [outcome] block")
    inputs = [Path(p) for p in inputs]
    tables = None
    stored = None
    if len(inputs) == 1 and _is_stacked(inputs[0]):
        s, stored = read_stacked(inputs[0], original)
    else:
        tables = read_imputations(inputs, original)
        s = stack(tables, cfg.stack)
    s = weigh(cfg, s, original)
    if stored is not None:
        gap = float(np.max(np.abs(stored - s.weights), initial=0.0))
        if gap > 1e-10:
            raise CommandError(f"regenerated weights differ from the stored _weight column by {gap:.3g}")
    fit = fit_stacked(s, cfg.outcome)
    reports = []
    for vm in cfg.variance:
        if vm == "rubin":
            if tables is None:
                raise CommandError("rubin variance needs the M separate imputation files")
            reports.append(rubin_from_fits([fit_table(t, cfg.outcome) for t in tables]))
        else:
            reports.append(variance_report(vm, s, fit))
    return reports


def _is_stacked(path) -> bool:
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    return bool(header) and header[0] == "_subject"


def cmd_analyze(config, inputs: Sequence, out=".") -> int:
    cfg = load_config(config)
    if not inputs:
        raise ConfigError("analyze needs a stacked file or the imputation files")
    original = _read_data(cfg, None)
    reports = analyze(cfg, original, inputs)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for rep in reports:
        write_reports(out / f"estimates_{rep.method}.csv", [rep])
    print(summary(reports))
    return 0


def summary(reports) -> str:
    lines = [f"{'coefficient':<14}{'estimate':>12}{'se':>12}{'ci_low':>12}{'ci_high':>12}  method"]
    for rep in reports:
        for r in rep.rows():
            lines.append(f"{r['coefficient']:<14}{r['estimate']:>12.5f}{r['se']:>12.5f}"
                         f"{r['ci_low']:>12.5f}{r['ci_high']:>12.5f}  {r['method']}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stackmi", description="Stacked, outcome-weighted multiple imputation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "run a simulation study"),
                           ("impute", "impute covariates and write imputed or stacked CSV"),
                           ("analyze", "fit the weighted stack and write estimates")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        if name == "impute":
            sp.add_argument("data", nargs="?", help="incomplete data CSV (default: [run] data)")
        elif name == "analyze":
            sp.add_argument("inputs", nargs="+", help="stacked.csv or imp_*.csv files")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out)
        if args.command == "impute":
            return cmd_impute(args.config, args.data, args.out)
        return cmd_analyze(args.config, args.inputs, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (CommandError, TableError, ImputationError, ConvergenceError, np.linalg.LinAlgError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
