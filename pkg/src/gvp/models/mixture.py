"""K-component mixture of Gaussian AR(1) experts with state-dependent weights.

With ``e = y - mu`` the component k predictive for ``e[t]`` is
``N(beta0_k + beta1_k * e[t-1], sigma_k**2)`` and its weight at time t is
proportional to ``tau_k * N(e[t-1]; mu_k, s_k**2)`` where
``mu_k = beta0_k / (1 - beta1_k)`` and ``s_k**2 = sigma_k**2 / (1 - beta1_k**2)``
are the stationary moments of the component. ``tau`` comes from stick
breaking on ``v in (0,1)^(K-1)`` with ``v_K = 1``.

Transformed coordinates, stored in blocks:
``beta0 (K) | eta (K) | psi (K-1) | kappa (K) | mu (1)`` where
``beta1 = 2 Phi(eta) - 1``, ``v = Phi(psi)``, ``sigma = exp(kappa)``.

Gradients follow the c1/c2/c3 decomposition (weight kernel, component
density, component cdf). They are assembled in log space: for any
per-component quantity ``L_k`` the gradient of
``log sum_k tau_kt exp(L_k)`` is
``sum_k pi_k dL_k + sum_k (pi_k - tau_kt) d log c1_k`` with ``pi`` the
normalised products, which avoids underflow of the weight kernels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri

from ..predictive import GaussianMixture, mixture_quantiles, norm_logpdf, norm_pdf
from ..scoring import ScoringRule
from .base import PredictiveModel, targets_or_default

log = logging.getLogger(__name__)

BETA0_PRIOR_SD = 1e4
MU_PRIOR_SD = 1e2
MIN_QUANTILE_DENSITY = 1e-300


def stick_breaking(v):
    """Weights from stick-breaking fractions ``v`` (length K-1, ``v_K = 1``).

    Returns ``(tau, dtau_dv, dv_dpsi)``: the K weights, the ``K x (K-1)``
    lower-triangular Jacobian, and the diagonal of ``dv/dpsi`` for
    ``v = Phi(psi)``.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0) or np.any(v >= 1):
        raise ValueError("stick-breaking fractions must lie strictly inside (0, 1)")
    K = v.size + 1
    vv = np.append(v, 1.0)
    rest = np.concatenate([[1.0], np.cumprod(1.0 - v)])  # prod_{j<k}(1 - v_j)
    tau = vv * rest
    jac = np.zeros((K, K - 1))
    for k in range(K):
        for s in range(min(k + 1, K - 1)):
            jac[k, s] = rest[k] if s == k else -tau[k] / (1.0 - v[s])
    dv_dpsi = norm_pdf(ndtri(v))
    return tau, jac, dv_dpsi


@dataclass(frozen=True)
class MixtureParams:
    mu: float
    v: tuple
    beta0: tuple
    beta1: tuple
    sigma: tuple

    def __post_init__(self):
        K = len(self.beta0)
        if not (len(self.beta1) == len(self.sigma) == K and len(self.v) == K - 1):
            raise ValueError("mixture parameter blocks have inconsistent lengths")
        if np.any(np.abs(self.beta1) >= 1):
            raise ValueError("|beta1| must be < 1")
        if np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("sigma must be > 0")
        if np.any(np.asarray(self.v) <= 0) or np.any(np.asarray(self.v) >= 1):
            raise ValueError("v must lie in (0, 1)")

    @property
    def K(self) -> int:
        return len(self.beta0)

    @property
    def tau(self) -> np.ndarray:
        return stick_breaking(np.asarray(self.v))[0]

    @property
    def stationary_means(self) -> np.ndarray:
        return np.asarray(self.beta0) / (1.0 - np.asarray(self.beta1))

    @property
    def stationary_vars(self) -> np.ndarray:
        return np.asarray(self.sigma) ** 2 / (1.0 - np.asarray(self.beta1) ** 2)

    def to_theta(self) -> np.ndarray:
        b1 = np.asarray(self.beta1, dtype=float)
        return np.concatenate([
            np.asarray(self.beta0, dtype=float),
            ndtri(0.5 * (b1 + 1.0)),
            ndtri(np.asarray(self.v, dtype=float)),
            np.log(np.asarray(self.sigma, dtype=float)),
            [self.mu],
        ])

    @classmethod
    def from_theta(cls, theta, K: int) -> MixtureParams:
        p = _unpack(np.asarray(theta, dtype=float), K)
        return cls(float(p.mu), tuple(p.v), tuple(p.beta0), tuple(p.beta1), tuple(p.sigma))


class _Unpacked:
    """Derived quantities of a transformed parameter vector (or a batch)."""

    def __init__(self, theta, K):
        self.beta0 = theta[..., :K]
        self.eta = theta[..., K:2 * K]
        self.psi = theta[..., 2 * K:3 * K - 1]
        self.kappa = theta[..., 3 * K - 1:4 * K - 1]
        self.mu = theta[..., 4 * K - 1]
        self.one_minus_b1 = 2.0 * ndtr(-self.eta)
        self.one_plus_b1 = 2.0 * ndtr(self.eta)
        self.beta1 = self.one_plus_b1 - 1.0
        self.one_minus_b1sq = self.one_minus_b1 * self.one_plus_b1
        self.sigma = np.exp(self.kappa)
        self.v = ndtr(self.psi)
        log_v = log_ndtr(self.psi)
        log_1mv = log_ndtr(-self.psi)
        cum = np.cumsum(log_1mv, axis=-1)
        zero = np.zeros(cum.shape[:-1] + (1,))
        rest = np.concatenate([zero, cum], axis=-1)  # log prod_{j<k}(1 - v_j)
        self.log_tau = rest + np.concatenate([log_v, zero], axis=-1)
        self.mu_k = self.beta0 / self.one_minus_b1
        self.s_k = self.sigma / np.sqrt(self.one_minus_b1sq)
        # d log tau_k / d psi_s = h_plus[s] (s == k) - h_minus[s] (s < k)
        self.h_plus = np.exp(norm_logpdf(self.psi) - log_v)
        self.h_minus = np.exp(norm_logpdf(self.psi) - log_1mv)


def _unpack(theta, K):
    if theta.shape[-1] != 4 * K:
        raise ValueError(f"mixture with K={K} needs {4 * K} parameters, got {theta.shape[-1]}")
    return _Unpacked(theta, K)


class MixtureModel(PredictiveModel):
    name = "mixture"
    n_presample = 1
    supported_kinds = frozenset({"LS", "CLS", "MSIS"})

    def __init__(self, K: int = 20):
        if K < 1:
            raise ValueError("K must be >= 1")
        self.K = int(K)
        self.param_names = (
            tuple(f"beta0_{k}" for k in range(K)) + tuple(f"eta_{k}" for k in range(K))
            + tuple(f"psi_{k}" for k in range(K - 1)) + tuple(f"kappa_{k}" for k in range(K))
            + ("mu",)
        )

    # -- per-term building blocks ------------------------------------------------

    def _kernel(self, p: _Unpacked, y_prev):
        """log c1 (weight kernel), log weights tau_kt and d log c1 blocks."""
        e_prev = y_prev - p.mu
        x1 = (e_prev[:, None] - p.mu_k) / p.s_k
        l1 = p.log_tau - np.log(p.s_k) + norm_logpdf(x1)
        log_tau_t = l1 - logsumexp(l1, axis=1, keepdims=True)
        b1 = p.beta1
        dmuk_db1 = p.beta0 / p.one_minus_b1 ** 2
        dlogs_db1 = b1 / p.one_minus_b1sq
        d = {
            "b0": x1 / (p.one_minus_b1 * p.s_k),
            "b1": x1 * dmuk_db1 / p.s_k + (x1 * x1 - 1.0) * dlogs_db1,
            "k": x1 * x1 - 1.0,
            "mu": x1 / p.s_k,
        }
        return l1, log_tau_t, d, e_prev

    @staticmethod
    def _standardised(p, e_prev, point):
        """``(point - mu - beta0 - beta1 e_prev) / sigma`` for each component."""
        return ((point - p.mu)[:, None] - p.beta0 - p.beta1 * e_prev[:, None]) / p.sigma

    @staticmethod
    def _dx(p, e_prev, x):
        """Partials of the standardised residual ``x`` (n, K) per block."""
        return {
            "b0": np.broadcast_to(-1.0 / p.sigma, x.shape),
            "b1": -e_prev[:, None] / p.sigma,
            "k": -x,
            "mu": np.broadcast_to((p.beta1 - 1.0) / p.sigma, x.shape),
        }

    def _assemble(self, p, A, dL, B, dl1):
        """Gradient rows ``sum_k A_k dL_k + B_k dl1_k`` in transformed blocks."""
        K = self.K
        n = A.shape[0]
        g = np.empty((n, 4 * K))
        g[:, :K] = A * dL["b0"] + B * dl1["b0"]
        g[:, K:2 * K] = (A * dL["b1"] + B * dl1["b1"]) * 2.0 * norm_pdf(p.eta)
        if K > 1:
            tail = np.cumsum(B[:, ::-1], axis=1)[:, ::-1]  # sum_{k >= s} B_k
            g[:, 2 * K:3 * K - 1] = B[:, :K - 1] * p.h_plus - tail[:, 1:] * p.h_minus
        g[:, 3 * K - 1:4 * K - 1] = A * dL["k"] + B * dl1["k"]
        g[:, 4 * K - 1] = np.sum(A * dL["mu"] + B * dl1["mu"], axis=1)
        return g

    def _log_mix_grad(self, p, log_tau_t, dl1, L, dL):
        """Value and gradient of ``log sum_k tau_kt exp(L_k)``."""
        a = log_tau_t + L
        val = logsumexp(a, axis=1)
        pi = np.exp(a - val[:, None])
        return val, self._assemble(p, pi, dL, pi - np.exp(log_tau_t), dl1)

    def _cdf_grad(self, p, log_tau_t, dl1, e_prev, point):
        """Mixture cdf at ``point``, its gradient and the density there."""
        x = self._standardised(p, e_prev, point)
        tau_t = np.exp(log_tau_t)
        c3 = ndtr(x)
        P = np.sum(tau_t * c3, axis=1)
        phi = norm_pdf(x)
        dx = self._dx(p, e_prev, x)
        dc3 = {k: phi * v for k, v in dx.items()}
        grad = self._assemble(p, tau_t, dc3, tau_t * (c3 - P[:, None]), dl1)
        dens = np.sum(tau_t * phi / p.sigma, axis=1)
        return P, grad, dens

    def _terms(self, rule, theta, y, want_grad):
        self.check_rule(rule)
        y = np.asarray(y, dtype=float)
        p = _unpack(np.asarray(theta, dtype=float), self.K)
        y_prev, y_cur = y[:-1], y[1:]
        l1, log_tau_t, dl1, e_prev = self._kernel(p, y_prev)
        x = self._standardised(p, e_prev, y_cur)
        if rule.kind in ("LS", "CLS"):
            L = norm_logpdf(x) - p.kappa
            dx = self._dx(p, e_prev, x)
            dL = {k: -x * v for k, v in dx.items()}
            dL["k"] = dL["k"] - 1.0
            s, g = self._log_mix_grad(p, log_tau_t, dl1, L, dL) if want_grad else (
                logsumexp(log_tau_t + L, axis=1), None)
            if rule.kind == "LS":
                return s, g
            if rule.threshold is None:
                raise ValueError(f"{rule.name} has no resolved threshold")
            q = np.full_like(y_cur, rule.threshold)
            xq = self._standardised(p, e_prev, q)
            if rule.tail == "upper":
                outside = y_cur <= rule.threshold
                Lq = log_ndtr(xq)
                sign = 1.0
            else:
                outside = y_cur >= rule.threshold
                Lq = log_ndtr(-xq)
                sign = -1.0
            if not want_grad:
                return np.where(outside, logsumexp(log_tau_t + Lq, axis=1), s), None
            mills = np.exp(norm_logpdf(xq) - Lq)
            dxq = self._dx(p, e_prev, xq)
            dLq = {k: sign * mills * v for k, v in dxq.items()}
            sq, gq = self._log_mix_grad(p, log_tau_t, dl1, Lq, dLq)
            return np.where(outside, sq, s), np.where(outside[:, None], gq, g)
        # MSIS
        alpha = rule.alpha
        tau_t = np.exp(log_tau_t)
        comp_means = p.mu + p.beta0 + p.beta1 * e_prev[:, None]
        sds = np.broadcast_to(p.sigma, comp_means.shape)
        lo = mixture_quantiles(tau_t, comp_means, sds, alpha / 2.0)
        hi = mixture_quantiles(tau_t, comp_means, sds, 1.0 - alpha / 2.0)
        width = hi - lo
        s = -(width + (2.0 / alpha) * (lo - y_cur) * (y_cur < lo) + (2.0 / alpha) * (y_cur - hi) * (y_cur > hi))
        if not want_grad:
            return s, None
        _, gP_hi, dens_hi = self._cdf_grad(p, log_tau_t, dl1, e_prev, hi)
        _, gP_lo, dens_lo = self._cdf_grad(p, log_tau_t, dl1, e_prev, lo)
        bad = (dens_hi < MIN_QUANTILE_DENSITY) | (dens_lo < MIN_QUANTILE_DENSITY)
        if bad.any():
            log.warning("mixture MSIS: %d terms dropped, density at interval bound below %g",
                        int(bad.sum()), MIN_QUANTILE_DENSITY)
        with np.errstate(divide="ignore", invalid="ignore"):
            dhi = -gP_hi / dens_hi[:, None]
            dlo = -gP_lo / dens_lo[:, None]
        ds_dhi = -1.0 + (2.0 / alpha) * (y_cur > hi)
        ds_dlo = 1.0 - (2.0 / alpha) * (y_cur < lo)
        g = ds_dhi[:, None] * dhi + ds_dlo[:, None] * dlo
        g[bad] = np.nan
        return s, g

    def score_terms(self, rule: ScoringRule, theta, y, x=None) -> np.ndarray:
        with np.errstate(all="ignore"):
            s, _ = self._terms(rule, theta, y, False)
        return np.where(np.isnan(s), -np.inf, s)

    def score_grad_terms(self, rule: ScoringRule, theta, y, x=None):
        with np.errstate(all="ignore"):
            s, g = self._terms(rule, theta, y, True)
        return np.where(np.isnan(s), -np.inf, s), g

    # -- prior ---------------------------------------------------------------------

    def log_prior(self, theta) -> float:
        p = _unpack(np.asarray(theta, dtype=float), self.K)
        return float(
            -0.5 * np.sum(p.beta0 ** 2) / BETA0_PRIOR_SD ** 2
            - 0.5 * np.sum(p.eta ** 2)
            + np.sum(log_ndtr(-p.psi) + norm_logpdf(p.psi))
            + np.sum(-2.0 * p.kappa - np.exp(-2.0 * p.kappa))
            - 0.5 * p.mu ** 2 / MU_PRIOR_SD ** 2
        )

    def grad_log_prior(self, theta) -> np.ndarray:
        p = _unpack(np.asarray(theta, dtype=float), self.K)
        return np.concatenate([
            -p.beta0 / BETA0_PRIOR_SD ** 2,
            -p.eta,
            -p.h_minus - p.psi,
            2.0 * np.exp(-2.0 * p.kappa) - 2.0,
            [-p.mu / MU_PRIOR_SD ** 2],
        ])

    # -- predictives -------------------------------------------------------------

    def predictive_arrays(self, thetas, y, x=None, targets=None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        y = np.asarray(y, dtype=float)
        targets = targets_or_default(targets, y.size)
        if targets.min() < 1 or targets.max() > y.size:
            raise ValueError("mixture targets must lie in [1, len(y)]")
        p = _unpack(thetas, self.K)  # arrays (M, K) and mu (M,)
        y_prev = y[targets - 1]  # (n_t,)
        e_prev = y_prev[:, None] - p.mu[None, :]  # (n_t, M)
        x1 = (e_prev[..., None] - p.mu_k[None]) / p.s_k[None]
        l1 = p.log_tau[None] - np.log(p.s_k)[None] + norm_logpdf(x1)
        w = np.exp(l1 - logsumexp(l1, axis=-1, keepdims=True))
        means = p.mu[None, :, None] + p.beta0[None] + p.beta1[None] * e_prev[..., None]
        var = np.broadcast_to((p.sigma ** 2)[None], means.shape)
        return w, means, var

    def predictive(self, theta, y, x=None) -> GaussianMixture:
        w, m, v = self.predictive_arrays(theta, y, x)
        return GaussianMixture(w[0, 0], m[0, 0], v[0, 0])

    def init_theta(self, y, x=None, rng=None) -> np.ndarray:
        """Quantile-spread start: components centred on evenly spaced
        sample quantiles, equal weights, no autoregression."""
        y = np.asarray(y, dtype=float)
        K = self.K
        mu = float(y.mean())
        sd = float(y.std(ddof=1))
        levels = (np.arange(K) + 0.5) / K
        beta0 = np.quantile(y - mu, levels) if K > 1 else np.zeros(1)
        v = 1.0 / (K - np.arange(K - 1))
        return MixtureParams(mu, tuple(v), tuple(beta0), tuple(np.zeros(K)),
                             tuple(np.full(K, 0.5 * sd if K > 1 else sd))).to_theta()

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "K": self.K}


def mixture_predictive(params: MixtureParams, y_prev: float) -> GaussianMixture:
    """Predictive of the next observation given the previous one."""
    model = MixtureModel(params.K)
    return model.predictive(params.to_theta(), np.array([y_prev]))
