"""Gaussian GARCH(1,1) predictive class.

Raw parameters ``(mu, omega, a, b)`` give
``sigma2[t] = omega + a * (y[t-1] - mu)**2 + b * sigma2[t-1]``. The
transformed vector is ``(mu, log omega, Phi^-1(a), Phi^-1(b))`` with
priors flat, flat, N(0,1), N(0,1) in those coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtr, ndtri

from ..predictive import norm_pdf
from ..scoring import ScoringRule, gaussian_score_partials
from .base import PredictiveModel, targets_or_default


@dataclass(frozen=True)
class GarchParams:
    mu: float
    omega: float
    a: float
    b: float

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("GARCH omega must be > 0")
        if not (0.0 < self.a < 1.0 and 0.0 < self.b < 1.0):
            raise ValueError("GARCH a and b must lie in (0, 1)")

    @property
    def raw(self) -> np.ndarray:
        return np.array([self.mu, self.omega, self.a, self.b])

    def to_theta(self) -> np.ndarray:
        return np.array([self.mu, np.log(self.omega), ndtri(self.a), ndtri(self.b)])

    @classmethod
    def from_theta(cls, theta) -> GarchParams:
        t = np.asarray(theta, dtype=float)
        return cls(float(t[0]), float(np.exp(t[1])), float(ndtr(t[2])), float(ndtr(t[3])))


class GarchFilter(NamedTuple):
    sigma2: np.ndarray
    dsigma2: np.ndarray | None  # (n, 4): d sigma2 / d (mu, omega, a, b)


def garch_filter(params, y, sigma0_sq: float, derivatives: bool = True) -> GarchFilter:
    """Run the variance recursion over ``y``.

    ``sigma2[t]`` is the conditional variance of the observation after
    ``y[t]``; the recursion is seeded with ``sigma0_sq`` (treated as a
    constant, so all derivative recursions start at zero).
    """
    mu, omega, a, b = (params.raw if isinstance(params, GarchParams) else np.asarray(params, float))
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 1:
        raise ValueError("garch_filter needs a non-empty 1-d series")
    if not np.all(np.isfinite(y)):
        raise ValueError("garch_filter input contains non-finite values")
    if not sigma0_sq > 0:
        raise ValueError("sigma0_sq must be > 0")
    e = y - mu
    e2 = e * e
    den = [1.0, -b]
    sigma2 = lfilter([1.0], den, omega + a * e2, zi=[b * sigma0_sq])[0]
    if not derivatives:
        return GarchFilter(sigma2, None)
    prev = np.empty_like(sigma2)
    prev[0] = sigma0_sq
    prev[1:] = sigma2[:-1]
    d = np.empty((y.size, 4))
    d[:, 0] = lfilter([1.0], den, -2.0 * a * e)
    d[:, 1] = lfilter([1.0], den, np.ones_like(e))
    d[:, 2] = lfilter([1.0], den, e2)
    d[:, 3] = lfilter([1.0], den, prev)
    return GarchFilter(sigma2, d)


class GarchModel(PredictiveModel):
    name = "garch"
    n_presample = 1
    param_names = ("mu", "log_omega", "probit_a", "probit_b")

    def __init__(self, sigma0_sq: float = 1.0):
        if not sigma0_sq > 0:
            raise ValueError("sigma0_sq must be > 0")
        self.sigma0_sq = float(sigma0_sq)

    @classmethod
    def from_data(cls, y) -> GarchModel:
        """Seed the recursion with the sample variance of the estimation window."""
        return cls(float(np.var(np.asarray(y, dtype=float), ddof=1)))

    @staticmethod
    def to_raw(theta) -> np.ndarray:
        t = np.asarray(theta, dtype=float)
        return np.array([t[..., 0], np.exp(t[..., 1]), ndtr(t[..., 2]), ndtr(t[..., 3])]).T

    @staticmethod
    def from_raw(raw) -> np.ndarray:
        r = np.asarray(raw, dtype=float)
        return np.array([r[..., 0], np.log(r[..., 1]), ndtri(r[..., 2]), ndtri(r[..., 3])]).T

    def _filter(self, theta, y, derivatives):
        raw = self.to_raw(theta)
        with np.errstate(over="ignore", invalid="ignore"):
            return raw, garch_filter(raw, y[:-1], self.sigma0_sq, derivatives)

    def score_terms(self, rule: ScoringRule, theta, y, x=None) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        raw, f = self._filter(theta, y, False)
        with np.errstate(all="ignore"):
            s, _, _ = gaussian_score_partials(rule, raw[0], f.sigma2, y[1:])
        return np.where(np.isnan(s), -np.inf, s)

    def score_grad_terms(self, rule: ScoringRule, theta, y, x=None):
        theta = np.asarray(theta, dtype=float)
        y = np.asarray(y, dtype=float)
        raw, f = self._filter(theta, y, True)
        with np.errstate(all="ignore"):
            s, dm, dv = gaussian_score_partials(rule, raw[0], f.sigma2, y[1:])
            g = dv[:, None] * f.dsigma2
            g[:, 0] += dm
            # chain factors to transformed coordinates
            g[:, 1] *= raw[1]
            g[:, 2] *= norm_pdf(theta[2])
            g[:, 3] *= norm_pdf(theta[3])
        return np.where(np.isnan(s), -np.inf, s), g

    def log_prior(self, theta) -> float:
        t = np.asarray(theta, dtype=float)
        return float(-0.5 * (t[2] ** 2 + t[3] ** 2) - np.log(2.0 * np.pi))

    def grad_log_prior(self, theta) -> np.ndarray:
        t = np.asarray(theta, dtype=float)
        return np.array([0.0, 0.0, -t[2], -t[3]])

    def variance_paths(self, thetas, y) -> np.ndarray:
        """``(M, len(y))`` conditional variances of ``y[1:], ..., y[len(y)]``."""
        raw = np.atleast_2d(self.to_raw(np.atleast_2d(thetas)))
        y = np.asarray(y, dtype=float)
        out = np.empty((raw.shape[0], y.size))
        with np.errstate(over="ignore"):
            for i, (mu, omega, a, b) in enumerate(raw):
                out[i] = lfilter([1.0], [1.0, -b], omega + a * (y - mu) ** 2, zi=[b * self.sigma0_sq])[0]
        return out

    def predictive_arrays(self, thetas, y, x=None, targets=None):
        thetas = np.atleast_2d(thetas)
        y = np.asarray(y, dtype=float)
        targets = targets_or_default(targets, y.size)
        if targets.min() < 1 or targets.max() > y.size:
            raise ValueError("GARCH targets must lie in [1, len(y)]")
        h = self.variance_paths(thetas, y[: targets.max()])[:, targets - 1].T  # (n_t, M)
        means = np.broadcast_to(thetas[:, 0], h.shape)
        return np.ones(h.shape + (1,)), means[..., None].copy(), h[..., None]

    def init_theta(self, y, x=None, rng=None) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return GarchParams(float(y.mean()), 0.1 * float(y.var(ddof=1)), 0.1, 0.8).to_theta()

    def valid(self, theta) -> bool:
        raw = self.to_raw(theta)
        return bool(np.all(np.isfinite(raw)) and raw[1] > 0 and 0 < raw[2] < 1 and 0 < raw[3] < 1)

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "sigma0_sq": self.sigma0_sq}
