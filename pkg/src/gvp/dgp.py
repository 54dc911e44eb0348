"""Seeded simulators for the data generating processes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit, ndtr


class SimulatedSeries(NamedTuple):
    y: np.ndarray
    x: np.ndarray | None = None
    sigma2: np.ndarray | None = None   # conditional variances (GARCH only)
    shocks: np.ndarray | None = None   # (T, 2) return and log-variance shocks (SV leverage only)


@dataclass(frozen=True)
class GarchGaussian:
    mu: float = 0.0
    omega: float = 0.01
    a: float = 0.1
    b: float = 0.75

    def validate(self):
        if not (self.omega > 0 and 0 < self.a and 0 < self.b and self.a + self.b < 1):
            raise ValueError("GARCH DGP needs omega > 0, a, b > 0 and a + b < 1")


@dataclass(frozen=True)
class SvLeverage:
    mean: float = -2.0
    persistence: float = 0.7
    shock_cov: tuple = ((1.0, -0.35), (-0.35, 0.25))

    def validate(self):
        _check_pd(self.shock_cov, "SV shock covariance")
        if abs(self.persistence) >= 1:
            raise ValueError("SV persistence must be inside (-1, 1)")


@dataclass(frozen=True)
class SvSmoothTransition:
    coef: float = 0.9
    eta_var: float = 0.25

    def validate(self):
        if not self.eta_var > 0:
            raise ValueError("eta variance must be > 0")


@dataclass(frozen=True)
class LstarT:
    rho1: float = 0.0
    rho2: float = 0.9
    gamma: float = 5.0
    c: float = 0.0
    sigma_eps: float = 1.0
    nu: float = 3.0

    def validate(self):
        if not self.nu > 2:
            raise ValueError("standardised Student-t needs nu > 2")
        if self.sigma_eps < 0:
            raise ValueError("sigma_eps must be >= 0")


@dataclass(frozen=True)
class DynRegression:
    Sigma: tuple = ((1.0, 0.5), (0.5, 1.25))
    sigma2: float = 0.2
    alpha: tuple = (0.5, 0.2, 0.15, 0.1)
    a: tuple = (1.3, -2.6, -1.5)
    b: tuple = (0.0, 1.3, 1.5)

    def validate(self):
        _check_pd(self.Sigma, "covariate covariance")
        if not self.sigma2 > 0:
            raise ValueError("AR(4) innovation variance must be > 0")
        if not ar_is_stationary(self.alpha):
            raise ValueError(f"AR(4) coefficients {self.alpha} are not stationary")


DGP_KINDS = {
    "garch": GarchGaussian,
    "sv-leverage": SvLeverage,
    "sv-smooth": SvSmoothTransition,
    "lstar": LstarT,
    "dynreg": DynRegression,
}


@dataclass(frozen=True)
class DgpSpec:
    variant: object
    T: int
    burn_in: int = 1000
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T < 1 or self.burn_in < 0:
            raise ValueError("T must be >= 1 and burn_in >= 0")
        self.variant.validate()

    @property
    def kind(self) -> str:
        for k, cls in DGP_KINDS.items():
            if isinstance(self.variant, cls):
                return k
        raise TypeError(f"unknown DGP variant {type(self.variant).__name__}")


def _check_pd(m, what):
    try:
        np.linalg.cholesky(np.asarray(m, dtype=float))
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} is not positive definite") from None


def ar_is_stationary(alpha) -> bool:
    roots = np.roots(np.r_[1.0, -np.asarray(alpha, dtype=float)])
    return bool(np.all(np.abs(roots) < 1.0))


def ar4_stationary_variance(alpha, sigma2: float) -> float:
    """Marginal variance of a stationary AR(p) process via Yule-Walker.

    Solves for ``gamma_0..gamma_p`` from
    ``gamma_k = sum_i alpha_i gamma_{|k-i|} + sigma2 * [k == 0]``.
    """
    alpha = np.asarray(alpha, dtype=float)
    p = alpha.size
    if not ar_is_stationary(alpha):
        raise ValueError("AR coefficients are not stationary")
    A = np.eye(p + 1)
    for k in range(p + 1):
        for i in range(1, p + 1):
            A[k, abs(k - i)] -= alpha[i - 1]
    rhs = np.zeros(p + 1)
    rhs[0] = sigma2
    try:
        gamma = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("singular Yule-Walker system") from exc
    return float(gamma[0])


def standardised_t(rng, nu: float, size) -> np.ndarray:
    return rng.standard_t(nu, size) * np.sqrt((nu - 2.0) / nu)


def simulate(spec: DgpSpec, rng: np.random.Generator | None = None) -> SimulatedSeries:
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    v = spec.variant
    n = spec.T + spec.burn_in
    keep = slice(spec.burn_in, None)
    if isinstance(v, GarchGaussian):
        z = rng.standard_normal(n)
        y = np.empty(n)
        s2 = np.empty(n)
        h = v.omega / (1.0 - v.a - v.b)
        e_prev = 0.0
        for t in range(n):
            h = v.omega + v.a * e_prev ** 2 + v.b * h if t else h
            s2[t] = h
            e_prev = np.sqrt(h) * z[t]
            y[t] = v.mu + e_prev
        return SimulatedSeries(y[keep], None, s2[keep])
    if isinstance(v, SvLeverage):
        shocks = rng.multivariate_normal([0.0, 0.0], np.asarray(v.shock_cov), size=n)
        eps, eta = shocks[:, 0], shocks[:, 1]
        # h_t - mean = persistence (h_{t-1} - mean) + eta_t, started at the mean
        h = v.mean + lfilter([1.0], [1.0, -v.persistence], eta)
        return SimulatedSeries((np.exp(h / 2.0) * eps)[keep], shocks=shocks[keep])
    if isinstance(v, SvSmoothTransition):
        eps = rng.standard_normal(n)
        eta = np.sqrt(v.eta_var) * rng.standard_normal(n)
        h = np.empty(n)
        prev = 0.0
        for t in range(n):
            prev = v.coef * expit(2.0 * prev) * prev + eta[t]
            h[t] = prev
        return SimulatedSeries((np.exp(h / 2.0) * eps)[keep])
    if isinstance(v, LstarT):
        eps = v.sigma_eps * standardised_t(rng, v.nu, n) if v.sigma_eps > 0 else np.zeros(n)
        y = np.empty(n)
        prev = 0.0
        for t in range(n):
            prev = v.rho1 * prev + v.rho2 * expit(v.gamma * (prev - v.c)) * prev + eps[t]
            y[t] = prev
        return SimulatedSeries(y[keep])
    if isinstance(v, DynRegression):
        x12 = rng.multivariate_normal([0.0, 0.0], np.asarray(v.Sigma), size=n)
        x3 = lfilter([1.0], np.r_[1.0, -np.asarray(v.alpha)], np.sqrt(v.sigma2) * rng.standard_normal(n))
        F = ndtr(x3 / np.sqrt(ar4_stationary_variance(v.alpha, v.sigma2)))
        X = np.column_stack([x12, x3])
        beta = np.asarray(v.b) + np.outer(F, v.a)
        y = np.sum(X * beta, axis=1)
        return SimulatedSeries(y[keep], X[keep])
    raise TypeError(f"unknown DGP variant {type(v).__name__}")
