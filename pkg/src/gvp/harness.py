"""Expanding-window out-of-sample evaluation.

For each update rule (one "cell" per rule and engine) the model is fitted
on ``y[:n0]``, refitted every ``refit_every`` steps with warm starts, and
the draw-averaged predictive of ``y[n]`` given ``y[:n]`` is scored under
every evaluation rule for ``n = n0, ..., T-1``.
"""

from __future__ import annotations

import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from math import comb
from typing import NamedTuple

import numpy as np

from .dgp import DgpSpec, simulate
from .mcmc import McmcConfig, McmcDiagnosticsError, rwm_sample, thin
from .models import BnnModel, GarchModel, GaussianMeanModel, MixtureModel
from .predictive import Ensemble
from .scoring import ScoringRule, parse_rules, score_rows
from .vb import CalibrationError, VariationalParams, VbConfig, calibrate

log = logging.getLogger(__name__)

ENGINES = ("vb", "mcmc", "both")
MODELS = ("garch", "mixture", "bnn", "gaussian")


class DrawError(ArithmeticError):
    """Too many variational draws mapped to invalid model parameters."""


@dataclass
class ExperimentConfig:
    dgp: DgpSpec
    model: str = "garch"
    model_options: dict = field(default_factory=dict)
    update_rules: tuple = ("LS", "CLS10", "CLS20", "CLS80", "CLS90", "CRPS", "MSIS")
    eval_rules: tuple | None = None
    n0: int = 1000
    refit_every: int = 1
    warm_start: bool = True
    M_predictive: int = 1000
    engine: str = "vb"
    w: float = 1.0
    seed: int = 0
    vb_iterations: int = 10000
    vb_refit_iterations: int = 1000
    vb_d0: float = 0.1
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    mcmc_burn_in: int = 20000
    mcmc_retained: int = 20000
    mcmc_adaptation: str = "scale-only"

    def __post_init__(self):
        self.update_rules = tuple(self.update_rules)
        self.eval_rules = tuple(self.eval_rules) if self.eval_rules is not None else self.update_rules
        if not self.update_rules or not self.eval_rules:
            raise ValueError("update and evaluation rule lists must be non-empty")
        if not 1 <= self.n0 < self.dgp.T:
            raise ValueError(f"need 1 <= n0 < T (n0={self.n0}, T={self.dgp.T})")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.M_predictive < 1:
            raise ValueError("M_predictive must be >= 1")
        kinds = {r.kind for r in parse_rules(self.update_rules + self.eval_rules)}
        if self.model == "mixture" and "CRPS" in kinds:
            raise ValueError("the mixture model cannot be updated or evaluated with CRPS")

    @property
    def T(self) -> int:
        return self.dgp.T

    @property
    def H(self) -> int:
        return self.dgp.T - self.n0

    def echo(self) -> dict:
        d = asdict(self)
        d["dgp"] = {"kind": self.dgp.kind, "T": self.dgp.T, "burn_in": self.dgp.burn_in,
                    "seed": self.dgp.seed, "params": asdict(self.dgp.variant)}
        return d


def cell_rng(master_seed: int, cell_id: str) -> np.random.Generator:
    """Independent stream per cell, derived from the master seed and the cell name."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(zlib.crc32(cell_id.encode()),))
    return np.random.default_rng(ss)


def build_model(config: ExperimentConfig, y0, x0=None):
    opts = dict(config.model_options)
    if config.model == "garch":
        return GarchModel.from_data(y0)
    if config.model == "mixture":
        return MixtureModel(int(opts.get("K", 20)))
    if config.model == "bnn":
        return BnnModel.from_data(y0, select_covariates(x0, opts.get("covariates", ())),
                                  activation=opts.get("activation", "tanh"),
                                  width=int(opts.get("width", 3)))
    return GaussianMeanModel(float(opts.get("sigma", 1.0)))


def select_covariates(x, columns):
    """Subset covariate columns by 0-based index or by name ``x1, x2, ...``."""
    if not columns:
        return None
    if x is None:
        raise ValueError("covariates requested but the series has none")
    idx = [int(c[1:]) - 1 if isinstance(c, str) else int(c) for c in columns]
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    if max(idx) >= x.shape[1] or min(idx) < 0:
        raise ValueError(f"covariate columns {list(columns)} out of range for {x.shape[1]} columns")
    return x[:, idx]


def draw_valid(model, lam: VariationalParams, M: int, rng: np.random.Generator):
    """``M`` variational draws; draws invalid for the model are redrawn."""
    draws = lam.mu + lam.d * rng.standard_normal((M, lam.dim))
    n_redrawn = 0
    for _ in range(100):
        bad = [i for i in range(M) if not model.valid(draws[i])]
        if not bad:
            break
        n_redrawn += len(bad)
        draws[bad] = lam.mu + lam.d * rng.standard_normal((len(bad), lam.dim))
    else:
        raise DrawError("could not obtain valid variational draws")
    if n_redrawn > 0.01 * M:
        raise DrawError(f"{n_redrawn} of {M} variational draws were invalid (more than 1%)")
    return draws, n_redrawn


def estimate_gvp_predictive(lam: VariationalParams, model, y, x=None, M: int = 1000,
                            seed=None) -> Ensemble:
    """Equal-weight ensemble over ``M`` draws from the variational posterior."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draws, _ = draw_valid(model, lam, M, rng)
    return model.ensemble(draws, y, x)


class CellResult(NamedTuple):
    rule: str
    engine: str
    scores: np.ndarray | None      # (H, n_eval) per-n scores
    error: str | None
    info: dict


def _score_block(model, thetas, y, x, targets, eval_rules):
    wts, means, var = model.predictive_arrays(thetas, y, x, targets)
    n_t, M, K = means.shape
    w = (wts / M).reshape(n_t, M * K)
    m = means.reshape(n_t, M * K)
    v = var.reshape(n_t, M * K)
    out = np.empty((n_t, len(eval_rules)))
    with np.errstate(all="ignore"):
        for j, r in enumerate(eval_rules):
            out[:, j] = score_rows(r, w, m, v, y[targets])
    return out


def run_cell(config: ExperimentConfig, rule_label: str, engine: str, y, x=None,
             vb_fits: list | None = None) -> CellResult:
    """One update rule under one engine over the whole evaluation period.

    For the MCMC engine ``vb_fits`` (the per-refit variational fits of the
    same rule) supply chain starting points and proposal scales.
    """
    y = np.asarray(y, dtype=float)
    started = time.perf_counter()
    rng = cell_rng(config.seed, f"{engine}/{rule_label}")
    y0 = y[: config.n0]
    x_all = select_covariates(x, config.model_options.get("covariates", ())) if config.model == "bnn" else None
    model = build_model(config, y0, None if x is None else np.asarray(x)[: config.n0])
    rule = ScoringRule.parse(rule_label).resolve(y0)
    eval_rules = [ScoringRule.parse(r).resolve(y0) for r in config.eval_rules]
    model.check_rule(rule)
    for r in eval_rules:
        model.check_rule(r)
    blocks = list(range(config.n0, config.T, config.refit_every))
    scores = np.empty((config.H, len(eval_rules)))
    info = {"rule": rule.name, "engine": engine, "n_refits": len(blocks), "vb_skipped": 0,
            "draws_redrawn": 0, "fits": [], "acceptance": []}
    lam = None
    chain_state = None
    try:
        for bi, b in enumerate(blocks):
            e = min(b + config.refit_every, config.T)
            y_fit = y[:b]
            x_fit = None if x_all is None else x_all[:b]
            if engine == "vb":
                first = lam is None or not config.warm_start
                vb_cfg = VbConfig(
                    iterations=config.vb_iterations if first else config.vb_refit_iterations,
                    w=config.w, d0=config.vb_d0, rho=config.adadelta_rho, eps=config.adadelta_eps)
                init = lam if (lam is not None and config.warm_start) else VariationalParams.initial(
                    model.init_theta(y_fit, x_fit, rng=np.random.default_rng(config.seed)), config.vb_d0)
                res = calibrate(model, rule, y_fit, vb_cfg, init, x_fit, rng=rng)
                lam = res.lam
                info["vb_skipped"] += res.n_skipped
                info["fits"].append(lam)
                thetas, redrawn = draw_valid(model, lam, config.M_predictive, rng)
                info["draws_redrawn"] += redrawn
            else:
                if vb_fits is not None:
                    start, scale = vb_fits[bi].mu, vb_fits[bi].sd
                elif chain_state is not None and config.warm_start:
                    start, scale = chain_state
                else:
                    start, scale = model.init_theta(y_fit, x_fit, rng=np.random.default_rng(config.seed)), None
                mc_cfg = McmcConfig(burn_in=config.mcmc_burn_in, retained=config.mcmc_retained,
                                    adaptation=config.mcmc_adaptation)

                def target(th, _y=y_fit, _x=x_fit):
                    return model.log_target(rule, th, _y, _x, config.w)

                chain = rwm_sample(target, start, mc_cfg, proposal_sd=scale, rng=rng)
                info["acceptance"].append(chain.acceptance_rate)
                chain_state = (chain.draws.mean(axis=0), chain.draws.std(axis=0))
                thetas = thin(chain.draws, config.M_predictive)
            targets = np.arange(b, e)
            scores[b - config.n0: e - config.n0] = _score_block(
                model, thetas, y[:e], None if x_all is None else x_all[:e], targets, eval_rules)
    except (CalibrationError, McmcDiagnosticsError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("cell %s/%s failed: %s", engine, rule_label, exc)
        info["seconds"] = time.perf_counter() - started
        return CellResult(rule.name, engine, None, f"{type(exc).__name__}: {exc}", info)
    info["seconds"] = time.perf_counter() - started
    return CellResult(rule.name, engine, scores, None, info)


@dataclass
class ScoreMatrix:
    rows: list
    cols: list
    values: np.ndarray
    H: int
    n_degenerate: np.ndarray
    failed: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    score_log: np.ndarray | None = None   # (rows, H, cols)

    @classmethod
    def from_cells(cls, cells: list[CellResult], cols: list[str], H: int, metadata=None) -> ScoreMatrix:
        rows = [c.rule for c in cells]
        values = np.full((len(rows), len(cols)), np.nan)
        degen = np.zeros((len(rows), len(cols)), dtype=int)
        logs = np.full((len(rows), H, len(cols)), np.nan)
        failed = {}
        for i, c in enumerate(cells):
            if c.error is not None:
                failed[c.rule] = c.error
                continue
            logs[i] = c.scores
            values[i], degen[i] = average_scores(c.scores)
        return cls(rows, list(cols), values, H, degen, failed, dict(metadata or {}), logs)

    def entry(self, row: str, col: str) -> float:
        return float(self.values[self.rows.index(row), self.cols.index(col)])

    def format(self, digits: int = 4) -> str:
        width = max(8, digits + 6)
        lines = ["U.method".ljust(10) + "".join(c.rjust(width) for c in self.cols)]
        for i, r in enumerate(self.rows):
            cells = []
            for j in range(len(self.cols)):
                v = self.values[i, j]
                cells.append(("failed" if np.isnan(v) else f"{v:.{digits}f}").rjust(width))
            lines.append(r.ljust(10) + "".join(cells))
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("update_rule," + ",".join(self.cols) + "\n")
            for i, r in enumerate(self.rows):
                fh.write(r + "," + ",".join(f"{v:.6g}" if np.isfinite(v) else "nan" for v in self.values[i]) + "\n")

    def log_to_csv(self, path, n0: int) -> None:
        """Per-n scores, full precision; averaging them reproduces the matrix."""
        with open(path, "w") as fh:
            fh.write("update_rule,n," + ",".join(self.cols) + "\n")
            for i, r in enumerate(self.rows):
                if r in self.failed:
                    continue
                for h in range(self.H):
                    fh.write(f"{r},{n0 + h}," + ",".join(repr(float(v)) for v in self.score_log[i, h]) + "\n")


def average_scores(scores) -> tuple[np.ndarray, np.ndarray]:
    """Column means over finite entries and the count of degenerate ones."""
    scores = np.asarray(scores, dtype=float)
    ok = np.isfinite(scores)
    sums = np.where(ok, scores, 0.0).sum(axis=0)
    n_ok = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(n_ok > 0, sums / n_ok, np.nan)
    return means, (~ok).sum(axis=0)


def _cell_task(args):
    config, rule, y, x = args
    vb = run_cell(config, rule, "vb", y, x) if config.engine in ("vb", "both") else None
    mc = None
    if config.engine in ("mcmc", "both"):
        fits = vb.info["fits"] if (vb is not None and vb.error is None) else None
        mc = run_cell(config, rule, "mcmc", y, x, fits)
    return vb, mc


def rolling_evaluate(config: ExperimentConfig, data=None, workers: int = 1) -> dict[str, ScoreMatrix]:
    """Score matrices keyed by engine (``vb`` and/or ``mcmc``).

    ``data`` is an optional ``(y, x)`` pair; otherwise the configured DGP is
    simulated. With ``workers > 1`` cells run in separate processes; each
    cell owns its random stream, so results do not depend on ``workers``.
    """
    started = time.perf_counter()
    if data is None:
        sim = simulate(config.dgp)
        y, x = sim.y, sim.x
    else:
        y, x = data
    y = np.asarray(y, dtype=float)
    if y.size < config.T:
        raise ValueError(f"series has {y.size} observations, config needs T={config.T}")
    y = y[: config.T]
    x = None if x is None else np.asarray(x, dtype=float)[: config.T]
    tasks = [(config, r, y, x) for r in config.update_rules]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_task, tasks))
    else:
        results = [_cell_task(t) for t in tasks]
    cols = [ScoringRule.parse(r).name for r in config.eval_rules]
    out = {}
    for k, engine in enumerate(("vb", "mcmc")):
        cells = [res[k] for res in results if res[k] is not None]
        if not cells:
            continue
        meta = {
            "engine": engine,
            "master_seed": config.seed,
            "cell_seeds": {c.rule: f"{engine}/{c.rule}" for c in cells},
            "refit_every": config.refit_every,
            "warm_start": config.warm_start,
            "n0": config.n0,
            "T": config.T,
            "config": config.echo(),
            "cells": {c.rule: _summarise_info(c.info) for c in cells},
            "seconds": time.perf_counter() - started,
        }
        out[engine] = ScoreMatrix.from_cells(cells, cols, config.H, meta)
    return out


def _summarise_info(info: dict) -> dict:
    d = {k: v for k, v in info.items() if k != "fits"}
    d["acceptance"] = [float(a) for a in info.get("acceptance", [])]
    return d


class ColumnCoherence(NamedTuple):
    column: str
    diagonal_best: bool
    margin: float
    best_row: str


def coherence_report(matrix: ScoreMatrix) -> list[ColumnCoherence]:
    """For each evaluation rule that is also an update rule: does the
    matching row attain the strict column maximum, and by how much.

    Ties count as not diagonal-best with zero margin; failed rows are ignored.
    """
    out = []
    for j, col in enumerate(matrix.cols):
        if col not in matrix.rows:
            continue
        i = matrix.rows.index(col)
        column = matrix.values[:, j]
        diag = column[i]
        others = np.delete(column, i)
        others = others[np.isfinite(others)]
        finite = np.where(np.isfinite(column), column, -np.inf)
        best_row = matrix.rows[int(np.argmax(finite))]
        if not np.isfinite(diag):
            out.append(ColumnCoherence(col, False, float("nan"), best_row))
            continue
        if others.size == 0:
            out.append(ColumnCoherence(col, True, float("inf"), col))
            continue
        margin = float(diag - others.max())
        out.append(ColumnCoherence(col, margin > 0, margin, col if margin > 0 else best_row))
    return out


class MergingReport(NamedTuple):
    differences: np.ndarray
    max_discrepancy: float
    worst_cell: tuple


def merging_report(a: ScoreMatrix, b: ScoreMatrix) -> MergingReport:
    if a.rows != b.rows or a.cols != b.cols:
        raise ValueError("score matrices have different row or column labels")
    diff = np.abs(a.values - b.values)
    if np.all(np.isnan(diff)):
        return MergingReport(diff, float("nan"), ())
    k = np.unravel_index(np.nanargmax(diff), diff.shape)
    return MergingReport(diff, float(diff[k]), (a.rows[k[0]], a.cols[k[1]]))


def difference(series, d: int) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if d < 0:
        raise ValueError("differencing order must be >= 0")
    if d >= series.size:
        raise ValueError(f"cannot difference {series.size} observations {d} times")
    return np.diff(series, n=d) if d else series.copy()


def undifference(draws, history, d: int) -> np.ndarray:
    """Map draws of ``diff^d Y[n+1]`` to draws of ``Y[n+1]`` using the last
    ``d`` observed levels in ``history``."""
    draws = np.asarray(draws, dtype=float)
    if d == 0:
        return draws.copy()
    history = np.asarray(history, dtype=float)
    if history.size < d:
        raise ValueError(f"need the last {d} levels to undo differencing of order {d}")
    # diff^d Y[n+1] = sum_k (-1)^k C(d, k) Y[n+1-k]
    level = sum((-1) ** (k + 1) * comb(d, k) * history[-k] for k in range(1, d + 1))
    return draws + level


def integrate(z, initial, d: int) -> np.ndarray:
    """Inverse of :func:`difference`: rebuild the level series from its
    ``d``-th differences and the first ``d`` levels."""
    z = np.asarray(z, dtype=float)
    if d == 0:
        return z.copy()
    initial = np.asarray(initial, dtype=float)
    if initial.size != d:
        raise ValueError(f"need exactly {d} initial levels")
    # first value of each lower-order difference
    heads = [difference(initial, k)[0] for k in range(d)]
    series = z
    for k in reversed(range(d)):
        series = np.concatenate([[heads[k]], heads[k] + np.cumsum(series)])
    return series
