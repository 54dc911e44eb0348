"""Small feed-forward network with Gaussian output noise.

``y[t] ~ N(g(z_t; omega), exp(2c))`` where ``z_t`` stacks the lagged
observation and any covariates at time t, standardised with constants
frozen from the estimation window. The network has two hidden layers of
equal width; weights are stored flat as ``W1 | b1 | W2 | b2 | w3 | b3``
followed by ``c``. Priors are flat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scoring import ScoringRule, gaussian_score_partials
from .base import PredictiveModel, targets_or_default


def _tanh(a):
    t = np.tanh(a)
    return t, 1.0 - t * t


def _sigmoid(a):
    s = 0.5 * (1.0 + np.tanh(0.5 * a))
    return s, s * (1.0 - s)


def _identity(a):
    return a, np.ones_like(a)


ACTIVATIONS = {"tanh": _tanh, "sigmoid": _sigmoid, "identity": _identity}


@dataclass(frozen=True)
class BnnParams:
    """Network weights for input dimension ``p`` and hidden width ``r``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: float

    @property
    def p(self) -> int:
        return self.W1.shape[1]

    @property
    def r(self) -> int:
        return self.W1.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2, self.w3, [self.b3]])

    @staticmethod
    def size(p: int, r: int = 3) -> int:
        return r * p + r + r * r + r + r + 1

    @classmethod
    def from_flat(cls, omega, p: int, r: int = 3) -> BnnParams:
        omega = np.asarray(omega, dtype=float)
        if omega.size != cls.size(p, r):
            raise ValueError(f"network with p={p}, r={r} needs {cls.size(p, r)} weights, got {omega.size}")
        i = 0
        parts = []
        for shape in [(r, p), (r,), (r, r), (r,), (r,)]:
            k = int(np.prod(shape))
            parts.append(omega[i:i + k].reshape(shape))
            i += k
        return cls(*parts, float(omega[i]))


def bnn_forward(params: BnnParams, z, activation: str = "tanh", gradient: bool = True):
    """Network output for inputs ``z`` of shape ``(n, p)`` (or ``(p,)``).

    Returns ``(g, dg)`` where ``dg`` has shape ``(n, n_weights)`` in the flat
    weight layout, computed by reverse accumulation.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != params.p:
        raise ValueError(f"network expects {params.p} inputs, got {z.shape[1]}")
    act = ACTIVATIONS[activation]
    h1, d1 = act(z @ params.W1.T + params.b1)
    h2, d2 = act(h1 @ params.W2.T + params.b2)
    g = h2 @ params.w3 + params.b3
    if not gradient:
        return (g[0] if single else g), None
    n, r = h2.shape
    da2 = params.w3 * d2
    da1 = (da2 @ params.W2) * d1
    dg = np.concatenate([
        (da1[:, :, None] * z[:, None, :]).reshape(n, -1),
        da1,
        (da2[:, :, None] * h1[:, None, :]).reshape(n, -1),
        da2,
        h2,
        np.ones((n, 1)),
    ], axis=1)
    return (g[0], dg[0]) if single else (g, dg)


class BnnModel(PredictiveModel):
    """Gaussian predictive with a neural-network mean.

    ``x`` (if given) is a ``(len, n_covariates)`` array aligned with ``y``:
    row t holds the covariates used to predict ``y[t]``. Out-of-sample
    prediction of ``y[n]`` therefore needs ``x`` rows up to n.
    """

    name = "bnn"
    n_presample = 1

    def __init__(self, n_covariates: int = 0, width: int = 3, activation: str = "tanh",
                 z_mean=None, z_sd=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
        self.n_covariates = int(n_covariates)
        self.p = 1 + self.n_covariates
        self.r = int(width)
        self.activation = activation
        self.z_mean = np.zeros(self.p) if z_mean is None else np.asarray(z_mean, dtype=float)
        self.z_sd = np.ones(self.p) if z_sd is None else np.asarray(z_sd, dtype=float)
        if self.z_mean.shape != (self.p,) or self.z_sd.shape != (self.p,) or np.any(self.z_sd <= 0):
            raise ValueError("standardisation constants must have one positive sd per input")
        self.n_weights = BnnParams.size(self.p, self.r)
        self.param_names = tuple(f"w{i}" for i in range(self.n_weights)) + ("c",)

    @classmethod
    def from_data(cls, y, x=None, **kw) -> BnnModel:
        """Freeze input standardisation constants from an estimation window."""
        y = np.asarray(y, dtype=float)
        cols = [y[:-1]]
        if x is not None:
            x = np.asarray(x, dtype=float).reshape(len(x), -1)
            cols += [x[1:y.size, j] for j in range(x.shape[1])]
        Z = np.column_stack(cols)
        sd = Z.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        return cls(n_covariates=Z.shape[1] - 1, z_mean=Z.mean(axis=0), z_sd=sd, **kw)

    def inputs(self, y, x, targets) -> np.ndarray:
        """Standardised ``z_t`` rows for the given target indices."""
        y = np.asarray(y, dtype=float)
        cols = [y[targets - 1]]
        if self.n_covariates:
            if x is None:
                raise ValueError(f"bnn model needs {self.n_covariates} covariate column(s)")
            x = np.asarray(x, dtype=float).reshape(len(x), -1)
            if x.shape[1] != self.n_covariates:
                raise ValueError(f"expected {self.n_covariates} covariate column(s), got {x.shape[1]}")
            if targets.max() >= len(x):
                raise ValueError("covariates must be available at every predicted time point")
            cols += [x[targets, j] for j in range(self.n_covariates)]
        return (np.column_stack(cols) - self.z_mean) / self.z_sd

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        return BnnParams.from_flat(theta[:-1], self.p, self.r), float(theta[-1])

    def score_terms(self, rule: ScoringRule, theta, y, x=None) -> np.ndarray:
        self.check_rule(rule)
        y = np.asarray(y, dtype=float)
        params, c = self._split(theta)
        z = self.inputs(y, x, np.arange(1, y.size))
        g, _ = bnn_forward(params, z, self.activation, gradient=False)
        with np.errstate(all="ignore"):
            s, _, _ = gaussian_score_partials(rule, g, np.exp(2.0 * c), y[1:])
        return np.where(np.isnan(s), -np.inf, s)

    def score_grad_terms(self, rule: ScoringRule, theta, y, x=None):
        self.check_rule(rule)
        y = np.asarray(y, dtype=float)
        params, c = self._split(theta)
        z = self.inputs(y, x, np.arange(1, y.size))
        g, dg = bnn_forward(params, z, self.activation)
        v = np.exp(2.0 * c)
        with np.errstate(all="ignore"):
            s, dm, dv = gaussian_score_partials(rule, g, v, y[1:])
            grad = np.column_stack([dm[:, None] * dg, 2.0 * v * dv])
        return np.where(np.isnan(s), -np.inf, s), grad

    def log_prior(self, theta) -> float:
        return 0.0

    def grad_log_prior(self, theta) -> np.ndarray:
        return np.zeros(self.dim)

    def predictive_arrays(self, thetas, y, x=None, targets=None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        y = np.asarray(y, dtype=float)
        targets = targets_or_default(targets, y.size)
        if targets.min() < 1 or targets.max() > y.size:
            raise ValueError("bnn targets must lie in [1, len(y)]")
        z = self.inputs(y, x, targets)
        means = np.empty((targets.size, thetas.shape[0]))
        for i, th in enumerate(thetas):
            params, _ = self._split(th)
            means[:, i] = bnn_forward(params, z, self.activation, gradient=False)[0]
        var = np.broadcast_to(np.exp(2.0 * thetas[:, -1]), means.shape)
        return np.ones(means.shape + (1,)), means[..., None], var[..., None].copy()

    def init_theta(self, y, x=None, rng=None) -> np.ndarray:
        """Small random weights, output bias at the sample mean."""
        rng = np.random.default_rng(0) if rng is None else rng
        y = np.asarray(y, dtype=float)
        w = 0.1 * rng.standard_normal(self.n_weights)
        w[-1] = y.mean()
        return np.append(w, np.log(y.std(ddof=1)))

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "inputs": self.p, "width": self.r,
                "activation": self.activation, "z_mean": self.z_mean.tolist(), "z_sd": self.z_sd.tolist()}
