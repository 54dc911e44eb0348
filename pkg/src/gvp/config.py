"""INI-style experiment configuration and CSV series input.

A configuration file has the sections ``[experiment]``, ``[dgp]``,
``[model]``, ``[vb]`` and ``[mcmc]``; every key is optional and falls
back to the defaults of :class:`~gvp.harness.ExperimentConfig`. Lists
are comma separated. Example::

    [experiment]
    model = garch
    update_rules = LS, CLS10, MSIS
    n0 = 1000
    refit_every = 250

    [dgp]
    kind = sv-leverage
    T = 3000
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import fields

import numpy as np

from .dgp import DGP_KINDS, DgpSpec
from .harness import ExperimentConfig


class ConfigError(ValueError):
    pass


class SeriesFormatError(ValueError):
    pass


_EXPERIMENT_KEYS = {
    "model": str, "update_rules": "list", "eval_rules": "list", "n0": int, "refit_every": int,
    "warm_start": bool, "M_predictive": int, "engine": str, "w": float, "seed": int,
}
_VB_KEYS = {"iterations": ("vb_iterations", int), "refit_iterations": ("vb_refit_iterations", int),
            "d0": ("vb_d0", float), "rho": ("adadelta_rho", float), "eps": ("adadelta_eps", float)}
_MCMC_KEYS = {"burn_in": ("mcmc_burn_in", int), "retained": ("mcmc_retained", int),
              "adaptation": ("mcmc_adaptation", str)}


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _convert(section, key, kind):
    try:
        if kind == "list":
            return _split(section[key])
        if kind is bool:
            return section.getboolean(key)
        return kind(section[key])
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key} = {section[key]!r}: {exc}") from None


def parse_dgp(section, seed: int) -> DgpSpec:
    kind = section.get("kind", "sv-leverage")
    if kind not in DGP_KINDS:
        raise ConfigError(f"[dgp] kind must be one of {sorted(DGP_KINDS)}, got {kind!r}")
    cls = DGP_KINDS[kind]
    params = {}
    names = {f.name: f for f in fields(cls)}
    for key in section:
        if key.lower() in ("kind", "t", "burn_in", "seed"):
            continue
        matches = [n for n in names if n.lower() == key.lower()]
        if not matches:
            raise ConfigError(f"[dgp] unknown parameter {key!r} for kind {kind}")
        name = matches[0]
        vals = [float(v) for v in _split(section[key].replace(";", ","))]
        default = getattr(cls(), name)
        if isinstance(default, tuple) and default and isinstance(default[0], tuple):
            n = len(default)
            if len(vals) != n * n:
                raise ConfigError(f"[dgp] {key} needs {n * n} values (row-major)")
            params[name] = tuple(tuple(vals[i * n:(i + 1) * n]) for i in range(n))
        elif isinstance(default, tuple):
            params[name] = tuple(vals)
        else:
            params[name] = vals[0]
    try:
        return DgpSpec(cls(**params), T=int(section.get("T", 3000)),
                       burn_in=int(section.get("burn_in", 1000)), seed=int(section.get("seed", seed)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[dgp] invalid specification: {exc}") from None


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_parser(cp, overrides)


def config_from_parser(cp: configparser.ConfigParser, overrides: dict | None = None) -> ExperimentConfig:
    for name in cp.sections():
        if name not in ("experiment", "dgp", "model", "vb", "mcmc", "pipeline"):
            raise ConfigError(f"unknown section [{name}]")
    kw = {}
    if cp.has_section("experiment"):
        sec = cp["experiment"]
        for key in sec:
            if key not in _EXPERIMENT_KEYS:
                raise ConfigError(f"[experiment] unknown key {key!r}")
            kw[key] = _convert(sec, key, _EXPERIMENT_KEYS[key])
    for sec_name, table in (("vb", _VB_KEYS), ("mcmc", _MCMC_KEYS)):
        if cp.has_section(sec_name):
            sec = cp[sec_name]
            for key in sec:
                if key not in table:
                    raise ConfigError(f"[{sec_name}] unknown key {key!r}")
                field_name, kind = table[key]
                kw[field_name] = _convert(sec, key, kind)
    if cp.has_section("model"):
        opts = {}
        for key, value in cp["model"].items():
            opts[key] = _split(value) if key == "covariates" else value
        kw["model_options"] = opts
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    seed = int(kw.get("seed", 0))
    if not cp.has_section("dgp"):
        cp.add_section("dgp")
    kw["dgp"] = parse_dgp(cp["dgp"], seed)
    if "update_rules" in kw:
        kw["update_rules"] = tuple(kw["update_rules"])
    if "eval_rules" in kw:
        kw["eval_rules"] = tuple(kw["eval_rules"])
    try:
        return ExperimentConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_series(path, column: str = "y", covariates=()) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a header-row CSV; returns ``(y, x)`` with ``x`` the selected
    covariate columns (or ``None``). Missing or non-numeric cells are
    rejected with the offending line number; nothing is imputed."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SeriesFormatError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if column not in header:
        raise SeriesFormatError(f"{path}: no column {column!r} in header {header}")
    wanted = [column] + list(covariates)
    for c in wanted:
        if c not in header:
            raise SeriesFormatError(f"{path}: no column {c!r} in header {header}")
    idx = [header.index(c) for c in wanted]
    while len(rows) > 1 and all(not c.strip() for c in rows[-1]):
        rows.pop()  # trailing blank lines
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            raise SeriesFormatError(f"{path}: line {lineno}: empty row (missing value)")
        if len(row) != len(header):
            raise SeriesFormatError(f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}")
        vals = []
        for i in idx:
            cell = row[i].strip()
            if cell == "":
                raise SeriesFormatError(f"{path}: line {lineno}: missing value in column {header[i]!r}")
            try:
                v = float(cell)
            except ValueError:
                raise SeriesFormatError(f"{path}: line {lineno}: non-numeric value {cell!r} in column "
                                        f"{header[i]!r}") from None
            if not np.isfinite(v):
                raise SeriesFormatError(f"{path}: line {lineno}: non-finite value {cell!r} in column "
                                        f"{header[i]!r}")
            vals.append(v)
        data.append(vals)
    if not data:
        raise SeriesFormatError(f"{path}: no data rows")
    arr = np.array(data)
    return arr[:, 0], (arr[:, 1:] if covariates else None)


def write_series(path, y, x=None) -> None:
    """CSV with a header row and full (round-trip) float precision."""
    y = np.asarray(y, dtype=float)
    cols = ["y"]
    if x is not None:
        x = np.asarray(x, dtype=float).reshape(len(y), -1)
        cols += [f"x{j + 1}" for j in range(x.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for t in range(y.size):
            row = [repr(float(y[t]))]
            if x is not None:
                row += [repr(float(v)) for v in x[t]]
            w.writerow(row)
