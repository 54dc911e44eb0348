"""I.i.d. Gaussian with unknown mean and known variance.

Under the log score with ``w = 1`` the Gibbs posterior is the ordinary
Bayesian posterior, which is available in closed form; this makes the
class a sanity check for the samplers.
"""

from __future__ import annotations

import numpy as np

from ..scoring import ScoringRule, gaussian_score_partials
from .base import PredictiveModel, targets_or_default


class GaussianMeanModel(PredictiveModel):
    name = "gaussian"
    n_presample = 0
    param_names = ("mean",)

    def __init__(self, sigma: float = 1.0, prior_mean: float = 0.0, prior_sd: float | None = None):
        if not sigma > 0:
            raise ValueError("sigma must be > 0")
        if prior_sd is not None and not prior_sd > 0:
            raise ValueError("prior_sd must be > 0 (or None for a flat prior)")
        self.sigma = float(sigma)
        self.prior_mean = float(prior_mean)
        self.prior_sd = prior_sd

    def score_terms(self, rule: ScoringRule, theta, y, x=None) -> np.ndarray:
        self.check_rule(rule)
        s, _, _ = gaussian_score_partials(rule, np.asarray(theta, float)[0], self.sigma ** 2, y)
        return np.asarray(s, dtype=float)

    def score_grad_terms(self, rule: ScoringRule, theta, y, x=None):
        self.check_rule(rule)
        s, dm, _ = gaussian_score_partials(rule, np.asarray(theta, float)[0], self.sigma ** 2, y)
        return np.asarray(s, dtype=float), np.asarray(dm, dtype=float)[:, None]

    def log_prior(self, theta) -> float:
        if self.prior_sd is None:
            return 0.0
        return float(-0.5 * ((theta[0] - self.prior_mean) / self.prior_sd) ** 2)

    def grad_log_prior(self, theta) -> np.ndarray:
        if self.prior_sd is None:
            return np.zeros(1)
        return np.array([-(theta[0] - self.prior_mean) / self.prior_sd ** 2])

    def exact_posterior(self, y) -> tuple[float, float]:
        """Posterior mean and variance of the mean under the log score, w = 1."""
        y = np.asarray(y, dtype=float)
        prec = y.size / self.sigma ** 2
        num = y.sum() / self.sigma ** 2
        if self.prior_sd is not None:
            prec += 1.0 / self.prior_sd ** 2
            num += self.prior_mean / self.prior_sd ** 2
        return num / prec, 1.0 / prec

    def predictive_arrays(self, thetas, y, x=None, targets=None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        targets = targets_or_default(targets, len(y))
        m = np.broadcast_to(thetas[:, 0], (targets.size, thetas.shape[0]))
        return np.ones(m.shape + (1,)), m[..., None].copy(), np.full(m.shape + (1,), self.sigma ** 2)

    def init_theta(self, y, x=None, rng=None) -> np.ndarray:
        return np.array([float(np.mean(y))])

    def describe(self) -> dict:
        return {"name": self.name, "dim": 1, "sigma": self.sigma, "prior_sd": self.prior_sd}
