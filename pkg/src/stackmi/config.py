"""Run configuration files.

The format is INI (read with :mod:`configparser`), one ``key = value`` per
line, with a block per column and per imputer::

    [run]
    seed = 20240501
    data = incomplete.csv
    na = NA
    M = 50
    cycles = 10
    stack = short             ; tall | short
    weights = mle             ; mle | draw | unit-1/M
    variance = louis, wood    ; louis sandwich sandwich-cluster wood model rubin
    output = stacked          ; stacked | separate
    threads = 1
    failure_threshold = 0.0

    [column x1]
    role = continuous         ; continuous binary categorical event-time event-indicator
    [column g]
    role = categorical
    levels = 3

    [imputer x2]
    predictors = x1, g
    family = bayes-linear     ; optional, inferred from the column role

    [outcome]
    family = gaussian-identity
    response = y
    terms = x1, x2, x1:x2

    [simulate]
    scenario = 1
    phi = 0,0,0 / 0,1,0       ; mechanisms separated by '/'
    R = 200
    n = 2000
    methods = full-data, complete-case
    variance = louis, sandwich

Columns without an ``[imputer]`` block that have missing values get one using
every other covariate. ``simulate`` reads ``[run] seed``/``threads``/``M``/
``cycles``/``failure_threshold`` and the ``[simulate]`` block only.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .imputation import IMPUTER_FAMILIES, ImputerSpec
from .models import FAMILIES, OutcomeSpec
from .study import METHODS, StudyConfig
from .table import Column, TableError

WEIGHT_CHOICES = ("mle", "draw", "unit-1/M")
VARIANCE_CHOICES = ("louis", "sandwich", "sandwich-cluster", "wood", "model", "rubin")


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending line or key."""


@dataclass
class RunConfig:
    seed: int
    path: Path
    data: Optional[Path] = None
    na: str = "NA"
    M: int = 50
    cycles: int = 10
    stack: str = "short"
    weights: str = "mle"
    variance: tuple = ("louis",)
    output: str = "stacked"
    threads: int = 1
    failure_threshold: float = 0.0
    columns: list = field(default_factory=list)
    imputers: list = field(default_factory=list)
    outcome: Optional[OutcomeSpec] = None
    study: Optional[StudyConfig] = None


def _line_of(text: str, section: str, key: Optional[str] = None) -> int:
    lines = text.splitlines()
    start = next((i for i, ln in enumerate(lines) if ln.strip() == f"[{section}]"), None)
    if start is None:
        return 0
    if key is None:
        return start + 1
    for i in range(start + 1, len(lines)):
        s = lines[i].strip()
        if s.startswith("["):
            break
        if re.match(rf"{re.escape(key)}\s*[=:]", s, flags=re.IGNORECASE):
            return i + 1
    return start + 1


class _Reader:
    def __init__(self, text: str, path):
        self.text = text
        self.path = path
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None,
                                       default_section="__none__")
        cp.optionxform = str
        try:
            cp.read_string(text, source=str(path))
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: key outside a [section]") from None
        except configparser.ParsingError as exc:
            lineno, line = exc.errors[0]
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {line.strip()!r}") from None
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: duplicate section [{exc.section}]") from None
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: duplicate key '{exc.option}' in [{exc.section}]") from None
        self.cp = cp

    def fail(self, section, key, msg):
        line = _line_of(self.text, section, key)
        where = f"line {line}, " if line else ""
        what = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigError(f"{self.path}: {where}{what}: {msg}")

    def has(self, section, key=None):
        if key is None:
            return self.cp.has_section(section)
        return self.cp.has_section(section) and self.cp.has_option(section, key)

    def get(self, section, key, default=None, required=False):
        if not self.has(section, key):
            if required:
                line = _line_of(self.text, section)
                where = f"line {line}, " if line else ""
                raise ConfigError(f"{self.path}: {where}missing key '{key}' in [{section}]")
            return default
        return self.cp.get(section, key).strip()

    def typed(self, section, key, conv, default=None, required=False, check=None, desc=""):
        raw = self.get(section, key, required=required)
        if raw is None:
            return default
        try:
            val = conv(raw)
        except (TypeError, ValueError):
            kind = {int: "an integer", float: "a number"}.get(conv, desc or "a value")
            self.fail(section, key, f"cannot parse {raw!r} as {kind}")
        if check is not None and not check(val):
            self.fail(section, key, f"invalid value {raw!r}{' (' + desc + ')' if desc else ''}")
        return val

    def choice(self, section, key, choices, default):
        val = self.get(section, key, default)
        if val not in choices:
            self.fail(section, key, f"{val!r} is not one of {', '.join(choices)}")
        return val

    def listing(self, section, key, choices=None, default=()):
        raw = self.get(section, key)
        if raw is None:
            return tuple(default)
        items = tuple(x.strip() for x in raw.split(",") if x.strip())
        if choices is not None:
            for x in items:
                if x not in choices:
                    self.fail(section, key, f"{x!r} is not one of {', '.join(choices)}")
        return items


def _phi_list(raw: str) -> tuple:
    out = [tuple(float(v) for v in block.split(",")) for block in raw.split("/") if block.strip()]
    if not out or any(len(p) != 3 for p in out):
        raise ValueError("each mechanism needs three numbers")
    return tuple(out)


def load_config(path) -> RunConfig:
    """Parse and validate a config file; raises :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    r = _Reader(text, path)
    if not r.has("run"):
        raise ConfigError(f"{path}: missing [run] section")
    seed = r.typed("run", "seed", int, required=True, check=lambda v: v >= 0, desc="a nonnegative integer")
    data = r.get("run", "data")
    cfg = RunConfig(
        seed=seed,
        path=path,
        data=(path.parent / data) if data else None,
        na=r.get("run", "na", "NA"),
        M=r.typed("run", "M", int, 50, check=lambda v: v >= 2, desc="at least 2"),
        cycles=r.typed("run", "cycles", int, 10, check=lambda v: v >= 1, desc="at least 1"),
        stack=r.choice("run", "stack", ("tall", "short"), "short"),
        weights=r.choice("run", "weights", WEIGHT_CHOICES, "mle"),
        variance=r.listing("run", "variance", VARIANCE_CHOICES, ("louis",)),
        output=r.choice("run", "output", ("stacked", "separate"), "stacked"),
        threads=r.typed("run", "threads", int, 1, check=lambda v: v >= 1, desc="at least 1"),
        failure_threshold=r.typed("run", "failure_threshold", float, 0.0,
                                  check=lambda v: 0.0 <= v <= 1.0, desc="a fraction in [0, 1]"),
    )

    for sec in r.cp.sections():
        kind, _, name = sec.partition(" ")
        name = name.strip()
        if kind == "column":
            role = r.get(sec, "role", "continuous")
            levels = r.typed(sec, "levels", int, None, desc="an integer")
            try:
                cfg.columns.append(Column(name, role, levels))
            except TableError as exc:
                r.fail(sec, "role", str(exc))
        elif kind == "imputer":
            preds = r.listing(sec, "predictors")
            fam = r.get(sec, "family")
            choices = tuple(IMPUTER_FAMILIES.values())
            if fam is not None and fam not in choices:
                r.fail(sec, "family", f"{fam!r} is not one of {', '.join(choices)}")
            cfg.imputers.append(ImputerSpec(name, preds, fam))
        elif sec not in ("run", "outcome", "simulate"):
            r.fail(sec, None, "unknown section")

    names = [c.name for c in cfg.columns]
    if len(set(names)) != len(names):
        raise ConfigError(f"{path}: duplicate [column] blocks")
    for spec in cfg.imputers:
        sec = f"imputer {spec.target}"
        if names and spec.target not in names:
            r.fail(sec, None, f"unknown column {spec.target!r}")
        for p in spec.predictors:
            if names and p not in names:
                r.fail(sec, "predictors", f"unknown column {p!r}")

    if r.has("outcome"):
        fam = r.choice("outcome", "family", FAMILIES, None) if r.has("outcome", "family") else None
        if fam is None:
            raise ConfigError(f"{path}: line {_line_of(text, 'outcome')}, missing key 'family' in [outcome]")
        response = r.listing("outcome", "response")
        terms = r.listing("outcome", "terms")
        if not response:
            raise ConfigError(f"{path}: line {_line_of(text, 'outcome')}, missing key 'response' in [outcome]")
        try:
            cfg.outcome = OutcomeSpec(fam, response, terms,
                                      intercept=r.typed("outcome", "intercept", _boolean, True, desc="yes/no"))
            if cfg.columns:
                cfg.outcome.check_table(cfg.columns)
        except (ValueError, TableError) as exc:
            r.fail("outcome", None, str(exc))

    if r.has("simulate"):
        sc = r.typed("simulate", "scenario", int, required=True, check=lambda v: v in (1, 2, 3, 4), desc="1-4")
        phi = r.typed("simulate", "phi", _phi_list, (), desc="mechanisms 'a,b,c / a,b,c'")
        try:
            cfg.study = StudyConfig(
                scenario=sc,
                phi=phi,
                R=r.typed("simulate", "R", int, 500, check=lambda v: v >= 1, desc="at least 1"),
                n=r.typed("simulate", "n", int, 2000, check=lambda v: v >= 10, desc="at least 10"),
                M=cfg.M,
                cycles=cfg.cycles,
                methods=r.listing("simulate", "methods", METHODS, METHODS),
                variance=r.listing("simulate", "variance", ("louis", "sandwich", "sandwich-cluster", "wood", "model"),
                                   ("louis",)),
                stack_mode=r.choice("simulate", "stack", ("tall", "short"), "tall"),
                seed=cfg.seed,
                threads=cfg.threads,
            )
        except ValueError as exc:
            r.fail("simulate", None, str(exc))
    return cfg


def _boolean(raw: str) -> bool:
    val = raw.lower()
    if val in ("1", "yes", "true", "on"):
        return True
    if val in ("0", "no", "false", "off"):
        return False
    raise ValueError(raw)
