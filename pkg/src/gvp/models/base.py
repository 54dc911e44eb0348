from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from ..predictive import Ensemble, GaussianMixture
from ..scoring import ScoringRule

log = logging.getLogger(__name__)


class ScoreEval(NamedTuple):
    value: float
    grad: np.ndarray
    n_degenerate: int


class PredictiveModel:
    """Shared surface of the predictive classes.

    Parameters ``theta`` always live in transformed (real-line)
    coordinates. ``y`` is the observed series; terms of the sample
    criterion are the scores of ``P(. | y[:t])`` at ``y[t]`` for
    ``t = n_presample, ..., len(y) - 1``.
    """

    name = "model"
    n_presample = 1
    supported_kinds = frozenset({"LS", "CRPS", "CLS", "MSIS"})
    param_names: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def check_rule(self, rule: ScoringRule) -> None:
        if rule.kind not in self.supported_kinds:
            raise ValueError(f"{self.name} model cannot be updated or scored with {rule.name}")

    def score_terms(self, rule, theta, y, x=None) -> np.ndarray:
        raise NotImplementedError

    def score_grad_terms(self, rule, theta, y, x=None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def score_and_grad(self, rule, theta, y, x=None) -> ScoreEval:
        """Sample criterion and its gradient in transformed coordinates.

        Non-finite terms are excluded from the gradient and counted.
        """
        terms, grads = self.score_grad_terms(rule, theta, y, x)
        ok = np.isfinite(terms) & np.all(np.isfinite(grads), axis=1)
        n_bad = int(terms.size - ok.sum())
        if n_bad:
            log.warning("%s/%s: %d degenerate score terms skipped", self.name, rule.name, n_bad)
        return ScoreEval(float(terms.sum()), grads[ok].sum(axis=0), n_bad)

    def log_prior(self, theta) -> float:
        raise NotImplementedError

    def grad_log_prior(self, theta) -> np.ndarray:
        raise NotImplementedError

    def log_target(self, rule, theta, y, x=None, w: float = 1.0) -> float:
        """Unnormalised log Gibbs posterior ``w * S_n(theta) + log prior``."""
        with np.errstate(all="ignore"):
            s = self.score_terms(rule, theta, y, x).sum()
        value = w * s + self.log_prior(theta)
        return float(value) if np.isfinite(value) else -np.inf

    def predictive_arrays(self, thetas, y, x=None, targets=None):
        """Component arrays ``(weights, means, variances)`` of shape
        ``(len(targets), M, K)`` for predicting ``y[t]`` from ``y[:t]``.

        ``targets`` defaults to the single out-of-sample step ``len(y)``.
        """
        raise NotImplementedError

    def predictive(self, theta, y, x=None) -> GaussianMixture:
        w, m, v = self.predictive_arrays(np.atleast_2d(theta), y, x)
        return GaussianMixture(w[0, 0] / w[0, 0].sum(), m[0, 0], v[0, 0])

    def ensemble(self, thetas, y, x=None) -> Ensemble:
        w, m, v = self.predictive_arrays(np.atleast_2d(thetas), y, x)
        return Ensemble.from_arrays(m[0], v[0], w[0])

    def init_theta(self, y, x=None, rng=None) -> np.ndarray:
        raise NotImplementedError

    def valid(self, theta) -> bool:
        return bool(np.all(np.isfinite(theta)))

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim}


def targets_or_default(targets, n: int) -> np.ndarray:
    if targets is None:
        return np.array([n])
    return np.asarray(targets, dtype=int)
