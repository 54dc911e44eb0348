"""Mean-field Gaussian approximation to the Gibbs posterior.

``q(theta) = prod_i N(theta_i; mu_i, d_i**2)`` is fitted by stochastic
gradient ascent on the ELBO ``E_q[w S_n(theta) + log pi(theta) - log q(theta)]``
with reparameterised single-draw gradients and ADADELTA steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class CalibrationError(RuntimeError):
    """Too many degenerate iterations; the partial trace is attached."""

    def __init__(self, message: str, trace: np.ndarray | None = None, n_skipped: int = 0):
        super().__init__(message)
        self.trace = trace
        self.n_skipped = n_skipped


@dataclass(frozen=True)
class VariationalParams:
    mu: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).copy())
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float).copy())
        if self.mu.shape != self.d.shape or self.mu.ndim != 1:
            raise ValueError("mu and d must be 1-d arrays of equal length")

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def sd(self) -> np.ndarray:
        return np.abs(self.d)

    @classmethod
    def initial(cls, mu0, d0: float = 0.1) -> VariationalParams:
        mu0 = np.asarray(mu0, dtype=float)
        return cls(mu0, np.full_like(mu0, d0))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mu, self.d])

    @classmethod
    def from_flat(cls, lam) -> VariationalParams:
        lam = np.asarray(lam, dtype=float)
        r = lam.size // 2
        return cls(lam[:r], lam[r:])

    def log_q(self, theta) -> float:
        var = self.d ** 2
        return float(-0.5 * np.sum(LOG_2PI + np.log(var) + (theta - self.mu) ** 2 / var))


def draw_theta(lam: VariationalParams, eps) -> np.ndarray:
    return lam.mu + lam.d * np.asarray(eps, dtype=float)


def grad_log_q(lam: VariationalParams, theta) -> np.ndarray:
    if np.any(lam.d == 0):
        raise ValueError("grad_log_q is undefined when some d_i = 0")
    return -(np.asarray(theta, dtype=float) - lam.mu) / lam.d ** 2


def elbo_gradient_estimate(lam: VariationalParams, model, rule, y, eps, x=None, w: float = 1.0):
    """Single-draw reparameterised ELBO gradient in ``(mu, d)``.

    Returns ``(grad, elbo_estimate, n_degenerate)``; ``grad`` is ``None``
    when the score or its gradient is not finite at the drawn theta.
    """
    eps = np.asarray(eps, dtype=float)
    theta = draw_theta(lam, eps)
    ev = model.score_and_grad(rule, theta, y, x)
    lp = model.log_prior(theta)
    h = w * ev.grad + model.grad_log_prior(theta) - grad_log_q(lam, theta)
    elbo = w * ev.value + lp - lam.log_q(theta)
    if not (np.all(np.isfinite(h)) and np.isfinite(elbo)) or ev.n_degenerate:
        return None, elbo, ev.n_degenerate
    return np.concatenate([h, h * eps]), elbo, 0


@dataclass
class AdadeltaState:
    accum_grad_sq: np.ndarray
    accum_step_sq: np.ndarray
    rho: float = 0.95
    eps: float = 1e-6

    @classmethod
    def zeros(cls, n: int, rho: float = 0.95, eps: float = 1e-6) -> AdadeltaState:
        if not 0.0 < rho < 1.0 or not eps > 0:
            raise ValueError("ADADELTA needs 0 < rho < 1 and eps > 0")
        return cls(np.zeros(n), np.zeros(n), rho, eps)


def adadelta_update(state: AdadeltaState, grad) -> tuple[np.ndarray, AdadeltaState]:
    """One ascent step. A non-finite gradient leaves the state untouched."""
    g = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(g)):
        return np.zeros_like(g), state
    rho, eps = state.rho, state.eps
    eg2 = rho * state.accum_grad_sq + (1.0 - rho) * g * g
    step = np.sqrt(state.accum_step_sq + eps) / np.sqrt(eg2 + eps) * g
    ed2 = rho * state.accum_step_sq + (1.0 - rho) * step * step
    return step, AdadeltaState(eg2, ed2, rho, eps)


@dataclass
class VbConfig:
    iterations: int = 10000
    w: float = 1.0
    mc_draws_per_gradient: int = 1
    seed: int = 0
    elbo_monitor_window: int = 500
    d0: float = 0.1
    rho: float = 0.95
    eps: float = 1e-6
    max_skip_fraction: float = 0.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.w > 0:
            raise ValueError("w must be > 0")
        if self.mc_draws_per_gradient < 1:
            raise ValueError("mc_draws_per_gradient must be >= 1")


@dataclass
class VbResult:
    lam: VariationalParams
    elbo_trace: np.ndarray
    n_skipped: int
    config: VbConfig = field(repr=False)

    def smoothed_elbo(self, window: int | None = None) -> np.ndarray:
        return smooth(self.elbo_trace, window or self.config.elbo_monitor_window)


def smooth(trace, window: int) -> np.ndarray:
    trace = np.asarray(trace, dtype=float)
    window = max(1, min(window, trace.size))
    c = np.cumsum(np.insert(trace, 0, 0.0))
    return (c[window:] - c[:-window]) / window


def calibrate(model, rule, y, config: VbConfig, lam_init: VariationalParams | None = None,
              x=None, rng: np.random.Generator | None = None) -> VbResult:
    """Run ``config.iterations`` ADADELTA ascent steps on the ELBO."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if lam_init is None:
        lam_init = VariationalParams.initial(model.init_theta(y, x, rng=np.random.default_rng(config.seed)),
                                             config.d0)
    if lam_init.dim != model.dim:
        raise ValueError(f"variational dimension {lam_init.dim} does not match model dimension {model.dim}")
    lam = lam_init.flat()
    r = lam_init.dim
    state = AdadeltaState.zeros(2 * r, config.rho, config.eps)
    trace = []
    skipped = 0
    for _ in range(config.iterations):
        current = VariationalParams(lam[:r], lam[r:])
        grads, elbos = [], []
        for _ in range(config.mc_draws_per_gradient):
            g, e, _ = elbo_gradient_estimate(current, model, rule, y, rng.standard_normal(r), x, config.w)
            if g is None:
                break
            grads.append(g)
            elbos.append(e)
        if len(grads) < config.mc_draws_per_gradient:
            skipped += 1
            continue
        step, state = adadelta_update(state, np.mean(grads, axis=0))
        lam = lam + step
        trace.append(float(np.mean(elbos)))
    trace = np.asarray(trace)
    if skipped > config.max_skip_fraction * config.iterations:
        raise CalibrationError(
            f"{model.name}/{rule.name}: {skipped} of {config.iterations} VB iterations were degenerate",
            trace, skipped)
    if skipped:
        log.warning("%s/%s: %d VB iterations skipped", model.name, rule.name, skipped)
    return VbResult(VariationalParams(lam[:r], lam[r:]), trace, skipped, config)


def sample_variational(lam: VariationalParams, M: int, seed=None) -> np.ndarray:
    """``(M, r)`` i.i.d. draws from ``q``; ``seed`` may be an int or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return lam.mu + lam.d * rng.standard_normal((int(M), lam.dim))
