"""Rectangular numeric datasets with column roles and a missingness mask."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

ROLES = ("continuous", "binary", "categorical", "event-time", "event-indicator")
OUTCOME_ROLES = ("event-time", "event-indicator")


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    role: str = "continuous"
    levels: Optional[int] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise TableError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.role == "categorical":
            if self.levels is None or int(self.levels) < 2:
                raise TableError(f"column {self.name!r}: categorical needs levels >= 2")
        elif self.levels is not None:
            raise TableError(f"column {self.name!r}: levels only apply to categorical columns")


class Table:
    """Immutable n x p numeric grid plus a boolean mask (True = observed).

    Unobserved cells hold NaN in ``values``. A table produced by
    :func:`stackmi.simulate.apply_missingness` also carries the pre-masking
    values in ``truth`` so simulation code can score estimates against them.
    """

    def __init__(self, columns: Sequence[Column], values, mask=None, truth=None, imputed=None):
        columns = tuple(columns)
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise TableError("duplicate column names")
        values = np.array(values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[1] != len(columns):
            raise TableError(f"values must be n x {len(columns)}, got shape {values.shape}")
        if mask is None:
            mask = ~np.isnan(values)
        mask = np.array(mask, dtype=bool, copy=True)
        if mask.shape != values.shape:
            raise TableError("mask and values differ in shape")
        values[~mask] = np.nan
        if np.isnan(values[mask]).any():
            raise TableError("observed cells must not be NaN")
        self.columns = columns
        self.values = values
        self.mask = mask
        self.truth = None if truth is None else np.array(truth, dtype=float, copy=True)
        # cells filled in by imputation (observed in ``mask`` but not in the source data)
        self.imputed = np.zeros_like(mask) if imputed is None else np.array(imputed, dtype=bool, copy=True)
        if self.imputed.shape != mask.shape:
            raise TableError("imputed grid and values differ in shape")
        self._check_roles()
        self.values.setflags(write=False)
        self.mask.setflags(write=False)
        self.imputed.setflags(write=False)
        if self.truth is not None:
            self.truth.setflags(write=False)

    def _check_roles(self):
        for j, col in enumerate(self.columns):
            v = self.values[self.mask[:, j], j]
            if col.role == "event-time" and (v <= 0).any():
                raise TableError(f"column {col.name!r}: nonpositive event time")
            if col.role in ("binary", "event-indicator") and not np.isin(v, (0.0, 1.0)).all():
                raise TableError(f"column {col.name!r}: values must be 0 or 1")
            if col.role == "categorical":
                if not (np.all(v == np.round(v)) and np.all((v >= 0) & (v < col.levels))):
                    raise TableError(f"column {col.name!r}: codes must be integers in [0, {col.levels})")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise TableError(f"unknown column {name!r}") from None

    def column(self, name: str) -> Column:
        return self.columns[self.index(name)]

    def col(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def complete_rows(self, names: Optional[Iterable[str]] = None) -> np.ndarray:
        """R_i: rows with every listed column observed (default: all columns)."""
        if names is None:
            return self.mask.all(axis=1)
        idx = [self.index(c) for c in names]
        return self.mask[:, idx].all(axis=1)

    def replace(self, values=None, mask=None, imputed=None) -> "Table":
        return Table(
            self.columns,
            self.values if values is None else values,
            self.mask if mask is None else mask,
            truth=self.truth,
            imputed=self.imputed if imputed is None else imputed,
        )

    @property
    def source_mask(self) -> np.ndarray:
        """Cells observed in the original data (imputed cells excluded)."""
        return self.mask & ~self.imputed

    def take(self, rows) -> "Table":
        truth = None if self.truth is None else self.truth[rows]
        return Table(self.columns, self.values[rows], self.mask[rows], truth=truth,
                     imputed=self.imputed[rows])

    def with_column(self, column: Column, values) -> "Table":
        values = np.asarray(values, dtype=float).reshape(-1, 1)
        truth = None if self.truth is None else np.hstack([self.truth, values])
        return Table(self.columns + (column,), np.hstack([self.values, values]),
                     np.hstack([self.mask, ~np.isnan(values)]), truth=truth,
                     imputed=np.hstack([self.imputed, np.zeros_like(values, dtype=bool)]))

    def equals(self, other: "Table") -> bool:
        return (self.columns == other.columns and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.imputed, other.imputed)
                and np.array_equal(self.values, other.values, equal_nan=True))

    def __repr__(self):
        return f"Table(n={self.n}, columns={self.names}, missing={int((~self.mask).sum())})"


def load_csv(path, schema: Sequence[Column], na_token: str = "NA") -> Table:
    """Read a headered comma-separated file; cells equal to ``na_token`` are unobserved."""
    schema = list(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TableError(f"{path}: empty file") from None
        known = {c.name for c in schema}
        for h in header:
            if h not in known:
                raise TableError(f"{path}: unknown column {h!r}")
        for c in schema:
            if c.name not in header:
                raise TableError(f"{path}: missing column {c.name!r}")
        pos = [header.index(c.name) for c in schema]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise TableError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
            row = []
            for c, j in zip(schema, pos):
                cell = rec[j].strip()
                if cell == na_token:
                    row.append(np.nan)
                    continue
                try:
                    row.append(float(cell))
                except ValueError:
                    raise TableError(f"{path}: line {lineno}, column {c.name!r}: cannot parse {cell!r}") from None
            rows.append(row)
    values = np.array(rows, dtype=float).reshape(len(rows), len(schema))
    return Table(schema, values)


def format_value(x: float, col: Column) -> str:
    if col.role in ("binary", "categorical", "event-indicator"):
        return str(int(x))
    return repr(float(x))


def write_csv(path, table: Table, na_token: str = "NA", extra: Optional[dict] = None) -> None:
    """Write ``table`` with shortest round-trip float formatting.

    ``extra`` maps leading column names to (values, formatter) pairs; used for the
    reserved ``_subject``/``_imp``/``_weight`` columns of a stacked file.
    """
    extra = extra or {}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(extra) + table.names)
        cols = [(vals, fmt) for vals, fmt in extra.values()]
        for i in range(table.n):
            rec = [fmt(vals[i]) for vals, fmt in cols]
            for j, col in enumerate(table.columns):
                rec.append(format_value(table.values[i, j], col) if table.mask[i, j] else na_token)
            w.writerow(rec)
