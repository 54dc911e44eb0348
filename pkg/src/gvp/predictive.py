"""One-step-ahead predictive distributions.

Every predictive used in the library is a (possibly single-component)
Gaussian mixture: the GARCH and neural-network classes give a Gaussian,
the autoregressive mixture class gives a K-component mixture, and
draw-averaged ensembles and kernel density estimates are equal-weight
mixtures of those.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class QuantileError(ArithmeticError):
    """Quantile inversion did not converge or could not be bracketed."""


def norm_logpdf(z):
    return -0.5 * np.square(z) - LOG_SQRT_2PI


def norm_pdf(z):
    return np.exp(norm_logpdf(z))


def mixture_quantiles(weights, means, sds, level, tol=1e-12, max_iter=200):
    """Vectorised quantiles of Gaussian mixtures.

    ``weights``, ``means`` and ``sds`` have shape ``(n, K)``; one quantile
    at ``level`` is returned per row. The root of ``cdf(x) - level`` is
    found by Newton steps kept inside a bisection bracket, so the
    iteration can never leave the bracket and degrades to bisection when
    the density is flat.
    """
    weights = np.atleast_2d(weights)
    means = np.atleast_2d(means)
    sds = np.atleast_2d(sds)
    if not 0.0 < level < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {level}")
    zq = ndtri(level)
    # Every component quantile brackets the mixture quantile.
    comp_q = means + zq * sds
    lo = comp_q.min(axis=1) - 1e-9 * (1.0 + np.abs(comp_q.min(axis=1)))
    hi = comp_q.max(axis=1) + 1e-9 * (1.0 + np.abs(comp_q.max(axis=1)))

    def cdf(x):
        return np.sum(weights * ndtr((x[:, None] - means) / sds), axis=1)

    # Bracket check with doubling, as a guard against malformed inputs.
    for _ in range(200):
        lo_bad = cdf(lo) > level
        hi_bad = cdf(hi) < level
        if not (lo_bad.any() or hi_bad.any()):
            break
        width = np.maximum(hi - lo, 1.0)
        lo = np.where(lo_bad, lo - width, lo)
        hi = np.where(hi_bad, hi + width, hi)
    else:
        raise QuantileError(f"could not bracket the {level} quantile after 200 doublings")

    # Start from the quantile of the moment-matched Gaussian.
    mix_mean = np.sum(weights * means, axis=1)
    mix_var = np.sum(weights * (sds ** 2 + means ** 2), axis=1) - mix_mean ** 2
    x = mix_mean + zq * np.sqrt(np.maximum(mix_var, 0.0))
    x = np.where((x > lo) & (x < hi), x, 0.5 * (lo + hi))
    dx_old = hi - lo
    for _ in range(max_iter):
        z = (x[:, None] - means) / sds
        f = np.sum(weights * ndtr(z), axis=1) - level
        if np.all(np.abs(f) <= tol):
            return x
        with np.errstate(over="ignore"):
            dens = np.sum(weights * norm_pdf(z) / sds, axis=1)
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - f / dens
        # Bisect unless Newton stays in the bracket and at least halves the
        # step, which rules out two-cycles between the bracket ends.
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        ok &= np.abs(newton - x) < 0.5 * np.abs(dx_old)
        x_new = np.where(ok, newton, 0.5 * (lo + hi))
        dx_old = np.where(ok, newton - x, 0.5 * (hi - lo))
        done = np.abs(f) <= tol
        x = np.where(done, x, x_new)
        if np.all(done | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(x)))):
            break
    resid = np.abs(cdf(x) - level)
    # A bracket collapsed to rounding level around a cdf jump (a near-atomic
    # component) holds the generalised inverse inf{x: cdf(x) >= level} at hi.
    collapsed = (resid > max(tol, 1e-10)) & (hi - lo <= 8 * np.finfo(float).eps * np.maximum(1.0, np.abs(hi)))
    x = np.where(collapsed, hi, x)
    resid = np.where(collapsed, 0.0, resid)
    if np.any(resid > max(tol, 1e-10)):
        raise QuantileError(
            f"quantile inversion at level {level} failed; max |cdf(q) - level| = {resid.max():.3e}"
        )
    return x


class GaussianMixture:
    """Finite Gaussian mixture with pdf, cdf and quantile.

    ``variances`` are component variances. Weights must sum to one.
    """

    def __init__(self, weights, means, variances):
        w = np.asarray(weights, dtype=float).ravel()
        m = np.asarray(means, dtype=float).ravel()
        v = np.asarray(variances, dtype=float).ravel()
        if not (w.shape == m.shape == v.shape) or w.size == 0:
            raise ValueError("weights, means and variances must be non-empty and aligned")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("mixture variances must be finite and strictly positive")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        if not np.all(np.isfinite(m)):
            raise ValueError("mixture means must be finite")
        self.weights = w
        self.means = m
        self.variances = v
        self.sds = np.sqrt(v)
        self._logw = np.log(w, where=w > 0, out=np.full_like(w, -np.inf))

    @property
    def n_components(self) -> int:
        return self.weights.size

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        z = (y[..., None] - self.means) / self.sds
        return logsumexp(self._logw + norm_logpdf(z) - np.log(self.sds), axis=-1)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.sum(self.weights * ndtr((y[..., None] - self.means) / self.sds), axis=-1)

    def sf(self, y):
        y = np.asarray(y, dtype=float)
        return np.sum(self.weights * ndtr((self.means - y[..., None]) / self.sds), axis=-1)

    def logcdf(self, y):
        y = np.asarray(y, dtype=float)
        return logsumexp(self._logw + log_ndtr((y[..., None] - self.means) / self.sds), axis=-1)

    def logsf(self, y):
        y = np.asarray(y, dtype=float)
        return logsumexp(self._logw + log_ndtr((self.means - y[..., None]) / self.sds), axis=-1)

    def quantile(self, level: float) -> float:
        return float(
            mixture_quantiles(self.weights[None], self.means[None], self.sds[None], level)[0]
        )

    def support_range(self, width: float = 12.0) -> tuple[float, float]:
        return float(np.min(self.means - width * self.sds)), float(np.max(self.means + width * self.sds))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n_components={self.n_components})"


class Gaussian(GaussianMixture):
    """Single Gaussian; closed forms replace the mixture machinery."""

    def __init__(self, mean: float, var: float):
        if not var > 0 or not np.isfinite(var):
            raise ValueError(f"Gaussian variance must be finite and > 0, got {var}")
        super().__init__([1.0], [mean], [var])
        self.mu = float(mean)
        self.var = float(var)
        self.sd = float(np.sqrt(var))

    def logpdf(self, y):
        return norm_logpdf((np.asarray(y, dtype=float) - self.mu) / self.sd) - np.log(self.sd)

    def cdf(self, y):
        return ndtr((np.asarray(y, dtype=float) - self.mu) / self.sd)

    def sf(self, y):
        return ndtr((self.mu - np.asarray(y, dtype=float)) / self.sd)

    def logcdf(self, y):
        return log_ndtr((np.asarray(y, dtype=float) - self.mu) / self.sd)

    def logsf(self, y):
        return log_ndtr((self.mu - np.asarray(y, dtype=float)) / self.sd)

    def quantile(self, level: float) -> float:
        if not 0.0 < level < 1.0:
            raise ValueError(f"quantile level must lie in (0, 1), got {level}")
        return float(self.mu + self.sd * ndtri(level))

    def __repr__(self) -> str:
        return f"Gaussian(mean={self.mu:.6g}, var={self.var:.6g})"


class Ensemble(GaussianMixture):
    """Equal-weight average of member predictives.

    pdf and cdf are member averages; quantiles come from inverting the
    averaged cdf. Members are stored flattened into one mixture.
    """

    def __init__(self, weights, means, variances, n_members: int):
        super().__init__(weights, means, variances)
        self.n_members = int(n_members)

    @classmethod
    def from_members(cls, members: Sequence[GaussianMixture]) -> Ensemble:
        if len(members) == 0:
            raise ValueError("an ensemble needs at least one member")
        M = len(members)
        w = np.concatenate([m.weights / M for m in members])
        return cls(w / w.sum(), np.concatenate([m.means for m in members]),
                   np.concatenate([m.variances for m in members]), M)

    @classmethod
    def from_arrays(cls, means, variances, weights=None) -> Ensemble:
        """Build from ``(M, K)`` component arrays, one row per member."""
        means = np.atleast_2d(np.asarray(means, dtype=float))
        variances = np.broadcast_to(np.asarray(variances, dtype=float), means.shape)
        if means.shape[0] == 0:
            raise ValueError("an ensemble needs at least one member")
        M, K = means.shape
        if weights is None:
            weights = np.full((M, K), 1.0 / K)
        w = np.broadcast_to(np.asarray(weights, dtype=float), means.shape) / M
        return cls(w.ravel() / w.sum(), means.ravel(), variances.ravel(), M)

    def members(self) -> list[GaussianMixture]:
        K = self.n_components // self.n_members
        out = []
        for i in range(self.n_members):
            sl = slice(i * K, (i + 1) * K)
            w = self.weights[sl]
            out.append(GaussianMixture(w / w.sum(), self.means[sl], self.variances[sl]))
        return out


def kde_predictive(samples, bandwidth: str | float = "silverman") -> Ensemble:
    """Gaussian-kernel density estimate as an equal-weight mixture.

    Silverman's rule ``0.9 * min(sd, IQR / 1.34) * M**(-1/5)`` is the
    default bandwidth; a float is used as the bandwidth directly.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 30:
        raise ValueError(f"kernel density estimation needs at least 30 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise ValueError("degenerate sample: zero variance, no density can be estimated")
    if bandwidth == "silverman":
        q75, q25 = np.percentile(x, [75, 25])
        spread = min(sd, (q75 - q25) / 1.34)
        if spread <= 0:
            spread = sd
        h = 0.9 * spread * x.size ** (-0.2)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError("bandwidth must be positive")
    return Ensemble.from_arrays(x[:, None], np.full((x.size, 1), h * h))
