"""Interval forecasts for a single series.

Difference the series, fit the autoregressive mixture under the interval
score, simulate from the variational predictive, undo the differencing
and read the interval off a kernel density estimate of the level draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .harness import difference, draw_valid, undifference
from .models import MixtureModel
from .predictive import kde_predictive
from .scoring import ScoringRule, msis_score
from .vb import VariationalParams, VbConfig, calibrate

MIN_LENGTH = 100


@dataclass
class PipelineResult:
    lower: float
    upper: float
    median: float
    alpha: float
    draws: np.ndarray
    lam: VariationalParams
    holdout: float | None = None
    holdout_msis: float | None = None


def simulate_predictive(model, thetas, y, rng) -> np.ndarray:
    """One draw of the next observation per parameter draw."""
    w, m, v = model.predictive_arrays(thetas, y)
    w, m, v = w[0], m[0], v[0]  # (M, K)
    u = rng.random(w.shape[0])[:, None]
    k = np.minimum((np.cumsum(w, axis=1) < u).sum(axis=1), w.shape[1] - 1)
    rows = np.arange(w.shape[0])
    return m[rows, k] + np.sqrt(v[rows, k]) * rng.standard_normal(w.shape[0])


def interval_forecast(series, d: int = 1, alpha: float = 0.05, K: int = 5, n_draws: int = 5000,
                      iterations: int = 2000, seed: int = 0, holdout: bool = False) -> PipelineResult:
    """Central ``1 - alpha`` interval for the next level of ``series``.

    With ``holdout`` the last observation is withheld, forecast, and
    scored with the (negated) interval score.
    """
    y = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    target = None
    if holdout:
        y, target = y[:-1], float(y[-1])
    z = difference(y, d)
    if z.size < MIN_LENGTH:
        raise ValueError(f"need at least {MIN_LENGTH} observations after differencing, got {z.size}")
    if np.var(z) == 0.0:
        raise ValueError("degenerate series: the (differenced) series has zero variance")
    rng = np.random.default_rng(seed)
    model = MixtureModel(K)
    rule = ScoringRule.parse(f"MSIS:{alpha}")
    cfg = VbConfig(iterations=iterations, w=1.0, seed=seed)
    lam = calibrate(model, rule, z, cfg, rng=rng).lam
    thetas, _ = draw_valid(model, lam, n_draws, rng)
    z_next = simulate_predictive(model, thetas, z, rng)
    level_draws = undifference(z_next, y, d)
    kde = kde_predictive(level_draws)
    lo, hi = kde.quantile(alpha / 2.0), kde.quantile(1.0 - alpha / 2.0)
    if not lo < hi:
        raise ArithmeticError(f"interval bounds out of order: {lo} >= {hi}")
    res = PipelineResult(lo, hi, kde.quantile(0.5), alpha, level_draws, lam)
    if target is not None:
        res.holdout = target
        res.holdout_msis = msis_score(kde, target, alpha)
    return res
