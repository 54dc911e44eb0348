"""Adaptive random-walk Metropolis for the exact Gibbs posterior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .predictive import Ensemble


class McmcDiagnosticsError(RuntimeError):
    pass


@dataclass
class McmcConfig:
    burn_in: int = 20000
    retained: int = 20000
    target_acceptance: float = 0.234
    adaptation: str = "scale-only"
    seed: int = 0
    cov_start: int = 5000
    min_acceptance: float = 0.01

    def __post_init__(self):
        if self.burn_in < 1 or self.retained < 1:
            raise ValueError("burn_in and retained must be >= 1")
        if self.adaptation not in ("scale-only", "full-covariance"):
            raise ValueError("adaptation must be 'scale-only' or 'full-covariance'")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target_acceptance must lie in (0, 1)")


@dataclass
class McmcResult:
    draws: np.ndarray          # (retained, r)
    accepted: np.ndarray       # (burn_in + retained,) bool
    log_scale: np.ndarray      # (burn_in + retained,) proposal log-scale in force
    chol: np.ndarray           # proposal Cholesky factor used after burn-in

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted[-self.draws.shape[0]:].mean())


def rwm_sample(log_target, theta_init, config: McmcConfig, proposal_sd=None,
               rng: np.random.Generator | None = None) -> McmcResult:
    """Gaussian random-walk Metropolis.

    During burn-in the log proposal scale follows a Robbins-Monro
    recursion towards ``target_acceptance``; with ``full-covariance`` the
    proposal shape switches to the empirical burn-in covariance after
    ``cov_start`` draws. Nothing adapts after burn-in.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    theta = np.array(theta_init, dtype=float)
    r = theta.size
    lp = log_target(theta)
    if not np.isfinite(lp):
        raise ValueError("log target is not finite at the initial point")
    sd = np.full(r, 0.1) if proposal_sd is None else np.abs(np.asarray(proposal_sd, dtype=float))
    sd = np.where(sd > 0, sd, 0.1)
    chol = np.diag(sd)
    log_s = np.log(2.38 / np.sqrt(r))
    n_total = config.burn_in + config.retained
    accepted = np.zeros(n_total, dtype=bool)
    scales = np.empty(n_total)
    draws = np.empty((config.retained, r))
    burn = np.empty((config.burn_in, r)) if config.adaptation == "full-covariance" else None
    for i in range(n_total):
        scales[i] = log_s
        prop = theta + np.exp(log_s) * (chol @ rng.standard_normal(r))
        lp_prop = log_target(prop)
        a = np.exp(min(0.0, lp_prop - lp)) if np.isfinite(lp_prop) else 0.0
        if rng.random() < a:
            theta, lp = prop, lp_prop
            accepted[i] = True
        if i < config.burn_in:
            log_s += (a - config.target_acceptance) / (i + 1) ** 0.6
            if burn is not None:
                burn[i] = theta
                if i + 1 >= config.cov_start and (i + 1) % 1000 == 0:
                    cov = np.atleast_2d(np.cov(burn[: i + 1].T)) + 1e-10 * np.eye(r)
                    try:
                        chol = np.linalg.cholesky(cov)
                    except np.linalg.LinAlgError:
                        pass
            if i + 1 == config.burn_in:
                tail = accepted[config.burn_in - max(1, config.burn_in // 4): config.burn_in]
                if tail.mean() < config.min_acceptance:
                    raise McmcDiagnosticsError(
                        f"acceptance {tail.mean():.4f} over the last burn-in quarter is below "
                        f"{config.min_acceptance}")
        else:
            draws[i - config.burn_in] = theta
    return McmcResult(draws, accepted, scales, chol)


def thin(draws, M: int | None) -> np.ndarray:
    """Evenly spaced subset of ``M`` draws (all when ``M`` is None or larger)."""
    draws = np.atleast_2d(draws)
    if M is None or M >= draws.shape[0]:
        return draws
    idx = np.linspace(0, draws.shape[0] - 1, int(M)).round().astype(int)
    return draws[idx]


def gibbs_predictive_estimate(draws, model, y, x=None) -> Ensemble:
    """Equal-weight ensemble of the per-draw one-step predictives."""
    draws = np.asarray(draws, dtype=float)
    if draws.size == 0:
        raise ValueError("no draws supplied")
    return model.ensemble(np.atleast_2d(draws), y, x)
