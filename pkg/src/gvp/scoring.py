"""Positively oriented scoring rules (larger is better).

LS, CRPS, censored log score (CLS) over a lower or upper tail, and the
negated interval score (MSIS). Each rule evaluates on any predictive in
:mod:`gvp.predictive`; the Gaussian case additionally has vectorised
closed forms with partial derivatives in the predictive mean and
variance, which the predictive models chain into parameter gradients.
"""

from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate
from scipy.special import erf, log_ndtr, logsumexp, ndtr, ndtri

from .predictive import Gaussian, GaussianMixture, mixture_quantiles, norm_logpdf, norm_pdf

log = logging.getLogger(__name__)

KINDS = ("LS", "CRPS", "CLS", "MSIS")
INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


class DegenerateScoreWarning(RuntimeWarning):
    """A score evaluated to -inf (zero predictive density or mass)."""


class OracleError(RuntimeError):
    """Numerical integration in a test oracle failed to converge."""


@dataclass(frozen=True)
class ScoringRule:
    """Which score drives an update or an evaluation.

    ``threshold_quantile`` is the empirical quantile level (of the
    estimation window) that defines the CLS threshold; ``threshold`` holds
    the resolved value once :meth:`resolve` has seen data.
    """

    kind: str
    tail: str | None = None
    threshold_quantile: float | None = None
    alpha: float | None = None
    threshold: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scoring rule kind {self.kind!r}")
        if self.kind == "CLS":
            if self.tail not in ("lower", "upper"):
                raise ValueError("CLS needs tail='lower' or 'upper'")
            if self.threshold_quantile is None or not 0.0 < self.threshold_quantile < 1.0:
                raise ValueError("CLS needs threshold_quantile in (0, 1)")
        elif self.tail is not None or self.threshold_quantile is not None or self.threshold is not None:
            raise ValueError(f"{self.kind} takes no tail or threshold")
        if self.kind == "MSIS":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError("MSIS needs alpha in (0, 1)")
        elif self.alpha is not None:
            raise ValueError(f"{self.kind} takes no alpha")

    @classmethod
    def parse(cls, text: str) -> ScoringRule:
        """Parse labels such as ``LS``, ``CRPS``, ``CLS10``, ``CLS90``,
        ``CLS80:lower``, ``MSIS`` or ``MSIS:0.1``.

        CLS levels below one half default to the lower tail.
        """
        label = text.strip().upper()
        if label in ("LS", "CRPS"):
            return cls(label)
        m = re.fullmatch(r"MSIS(?::([0-9.]+))?", label)
        if m:
            return cls("MSIS", alpha=float(m.group(1)) if m.group(1) else 0.05)
        m = re.fullmatch(r"CLS([0-9]+(?:\.[0-9]+)?)(?::(LOWER|UPPER))?", label)
        if m:
            level = float(m.group(1)) / 100.0
            tail = m.group(2).lower() if m.group(2) else ("lower" if level < 0.5 else "upper")
            return cls("CLS", tail=tail, threshold_quantile=level)
        raise ValueError(f"cannot parse scoring rule {text!r}")

    @property
    def name(self) -> str:
        if self.kind == "CLS":
            pct = f"{100 * self.threshold_quantile:g}"
            default_tail = "lower" if self.threshold_quantile < 0.5 else "upper"
            return f"CLS{pct}" + ("" if self.tail == default_tail else f":{self.tail}")
        if self.kind == "MSIS" and self.alpha != 0.05:
            return f"MSIS:{self.alpha:g}"
        return self.kind

    def resolve(self, y) -> ScoringRule:
        """Freeze the CLS threshold at the empirical quantile of ``y``."""
        if self.kind != "CLS":
            return self
        y = np.asarray(y, dtype=float)
        return replace(self, threshold=float(np.quantile(y, self.threshold_quantile)))

    def __str__(self) -> str:
        return self.name


def parse_rules(labels) -> list[ScoringRule]:
    if isinstance(labels, str):
        labels = [s for s in re.split(r"[,\s]+", labels) if s]
    return [r if isinstance(r, ScoringRule) else ScoringRule.parse(r) for r in labels]


def _flag(value: float, what: str) -> float:
    if value == -np.inf:
        warnings.warn(f"degenerate {what}: score is -inf", DegenerateScoreWarning, stacklevel=3)
    return value


def log_score(pred: GaussianMixture, y: float) -> float:
    return _flag(float(pred.logpdf(y)), "log score")


def censored_log_score(pred: GaussianMixture, y: float, y_q: float, tail: str) -> float:
    """Log density inside the region of interest, log mass of the
    complement outside it.

    Upper tail: region ``y > y_q``. Lower tail: region ``y < y_q``.
    """
    if tail == "upper":
        inside = y > y_q
        value = pred.logpdf(y) if inside else pred.logcdf(y_q)
    elif tail == "lower":
        inside = y < y_q
        value = pred.logpdf(y) if inside else pred.logsf(y_q)
    else:
        raise ValueError(f"tail must be 'lower' or 'upper', got {tail!r}")
    return _flag(float(value), "censored log score")


def interval_bounds(pred: GaussianMixture, alpha: float) -> tuple[float, float]:
    return pred.quantile(alpha / 2.0), pred.quantile(1.0 - alpha / 2.0)


def msis_score(pred: GaussianMixture, y: float, alpha: float) -> float:
    """Negated interval score of the central ``1 - alpha`` interval."""
    lo, hi = interval_bounds(pred, alpha)
    return -_interval_score(lo, hi, y, alpha)


def _interval_score(lo, hi, y, alpha):
    return (hi - lo) + (2.0 / alpha) * (lo - y) * (y < lo) + (2.0 / alpha) * (y - hi) * (y > hi)


def _abs_gauss_mean(mu, var):
    """E|X| for X ~ N(mu, var)."""
    sd = np.sqrt(var)
    z = mu / sd
    return mu * (2.0 * ndtr(z) - 1.0) + 2.0 * sd * norm_pdf(z)


def crps_gaussian(mean, var, y):
    """Closed-form Gaussian CRPS, positively oriented: ``-sd * B(z)``."""
    sd = np.sqrt(var)
    z = (np.asarray(y, dtype=float) - mean) / sd
    return -sd * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * norm_pdf(z) - INV_SQRT_PI)


def crps_mixture(pred: GaussianMixture, y: float) -> float:
    """Closed-form CRPS of a Gaussian mixture (negated).

    ``E|X - y| - E|X - X'| / 2`` with both expectations available in
    closed form; the pairwise term costs O(K^2).
    """
    w, m, v = pred.weights, pred.means, pred.variances
    first = float(w @ _abs_gauss_mean(y - m, v))
    second = _pairwise_abs_mean(w, m, v)
    return -(first - 0.5 * second)


def crps_score(pred: GaussianMixture, y: float) -> float:
    if isinstance(pred, Gaussian):
        if not pred.var > 0:
            raise ValueError("CRPS needs a strictly positive variance")
        return float(crps_gaussian(pred.mu, pred.var, y))
    return crps_mixture(pred, y)


def crps_numeric_oracle(pred: GaussianMixture, y: float, width: float = 12.0,
                        epsabs: float = 1e-10) -> float:
    """CRPS by adaptive quadrature of ``-(F(x) - 1{x >= y})^2``.

    Integrates over ``[min(m - width*sd), max(m + width*sd)]`` (extended
    to contain ``y``), split at ``y`` where the integrand jumps.
    """
    lo, hi = pred.support_range(width)
    lo, hi = min(lo, y), max(hi, y)

    def left(x):
        return float(pred.cdf(x)) ** 2

    def right(x):
        return float(pred.sf(x)) ** 2

    total = 0.0
    for f, a, b in ((left, lo, y), (right, y, hi)):
        if b <= a:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(f, a, b, epsabs=epsabs, epsrel=1e-12, limit=500)
            except integrate.IntegrationWarning as exc:
                raise OracleError(f"CRPS quadrature did not converge: {exc}") from exc
        if err > 1e-8:
            raise OracleError(f"CRPS quadrature error estimate {err:.2e} above 1e-8")
        total += val
    return -total


def score(rule: ScoringRule, pred: GaussianMixture, y: float) -> float:
    """Evaluate ``rule`` on ``pred`` at the realisation ``y``."""
    if rule.kind == "LS":
        return log_score(pred, y)
    if rule.kind == "CRPS":
        return crps_score(pred, y)
    if rule.kind == "CLS":
        if rule.threshold is None:
            raise ValueError(f"{rule.name} has no resolved threshold; call rule.resolve(y) first")
        return censored_log_score(pred, y, rule.threshold, rule.tail)
    return msis_score(pred, y, rule.alpha)


def gaussian_score_partials(rule: ScoringRule, mean, var, y):
    """Per-observation score and its partials in the Gaussian mean and variance.

    Returns ``(s, ds/dmean, ds/dvar)`` as arrays broadcast over the inputs.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    y = np.asarray(y, dtype=float)
    sd = np.sqrt(var)
    e = y - mean
    z = e / sd
    kind = rule.kind
    if kind == "LS" or kind == "CLS":
        s = norm_logpdf(z) - np.log(sd)
        dm = e / var
        dv = -0.5 / var + 0.5 * e * e / (var * var)
        if kind == "LS":
            return s, dm, dv
        if rule.threshold is None:
            raise ValueError(f"{rule.name} has no resolved threshold")
        zq = (rule.threshold - mean) / sd
        if rule.tail == "upper":
            outside = y <= rule.threshold
            # log P(y_q) and its partials
            s_out = log_ndtr(zq)
            ratio = np.exp(norm_logpdf(zq) - s_out)
            dm_out = -ratio / sd
            dv_out = -ratio * zq / (2.0 * var)
        else:
            outside = y >= rule.threshold
            # log(1 - P(y_q)) and its partials
            s_out = log_ndtr(-zq)
            ratio = np.exp(norm_logpdf(zq) - s_out)
            dm_out = ratio / sd
            dv_out = ratio * zq / (2.0 * var)
        return (np.where(outside, s_out, s), np.where(outside, dm_out, dm),
                np.where(outside, dv_out, dv))
    if kind == "CRPS":
        Phi = ndtr(z)
        phi = norm_pdf(z)
        s = -sd * (z * (2.0 * Phi - 1.0) + 2.0 * phi - INV_SQRT_PI)
        dm = 2.0 * Phi - 1.0
        dv = (INV_SQRT_PI - 2.0 * phi) / (2.0 * sd)
        return s, dm, dv
    # MSIS: bounds mean -/+ z_a * sd
    alpha = rule.alpha
    za = ndtri(1.0 - alpha / 2.0)
    lo = mean - za * sd
    hi = mean + za * sd
    s = -_interval_score(lo, hi, y, alpha)
    ds_dhi = -1.0 + (2.0 / alpha) * (y > hi)
    ds_dlo = 1.0 - (2.0 / alpha) * (y < lo)
    dm = ds_dhi + ds_dlo
    dv = (ds_dhi - ds_dlo) * za / (2.0 * sd)
    return s, dm, dv


def sample_criterion(rule: ScoringRule, model, theta, y, x=None) -> float:
    """Sum of one-step-ahead scores of the model over the sample.

    Raises ``FloatingPointError`` naming the first degenerate term.
    """
    terms = model.score_terms(rule, theta, y, x)
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        t = int(bad[0]) + model.n_presample
        raise FloatingPointError(f"degenerate score term at index t={t} ({terms[bad[0]]})")
    return float(terms.sum())


def score_rows(rule: ScoringRule, weights, means, variances, y) -> np.ndarray:
    """Scores of many mixtures at once.

    Row i of the ``(n, N)`` arrays is one predictive, scored at ``y[i]``.
    Degenerate rows come back as ``-inf`` rather than raising.
    """
    w = np.asarray(weights, dtype=float)
    m = np.asarray(means, dtype=float)
    v = np.asarray(variances, dtype=float)
    y = np.asarray(y, dtype=float)
    sd = np.sqrt(v)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    if rule.kind in ("LS", "CLS"):
        dens = logsumexp(logw + norm_logpdf((y[:, None] - m) / sd) - np.log(sd), axis=1)
        if rule.kind == "LS":
            return dens
        if rule.threshold is None:
            raise ValueError(f"{rule.name} has no resolved threshold")
        zq = (rule.threshold - m) / sd
        if rule.tail == "upper":
            return np.where(y > rule.threshold, dens, logsumexp(logw + log_ndtr(zq), axis=1))
        return np.where(y < rule.threshold, dens, logsumexp(logw + log_ndtr(-zq), axis=1))
    if rule.kind == "MSIS":
        lo = mixture_quantiles(w, m, sd, rule.alpha / 2.0)
        hi = mixture_quantiles(w, m, sd, 1.0 - rule.alpha / 2.0)
        return -_interval_score(lo, hi, y, rule.alpha)
    out = np.empty(y.size)
    for i in range(y.size):
        out[i] = -(w[i] @ _abs_gauss_mean(y[i] - m[i], v[i]) - 0.5 * _pairwise_abs_mean(w[i], m[i], v[i]))
    return out


_TRIU_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _pairwise_abs_mean(w, m, v) -> float:
    """``sum_ij w_i w_j E|X_i - X_j|`` for independent Gaussian components.

    Uses symmetry: the diagonal is ``2 sd_i / sqrt(pi)`` and each
    off-diagonal pair is counted twice.
    """
    N = w.size
    diag = float(np.sum(w * w * 2.0 * np.sqrt(v) * INV_SQRT_PI))
    if N == 1:
        return diag
    if N not in _TRIU_CACHE:
        if len(_TRIU_CACHE) > 8:
            _TRIU_CACHE.clear()
        _TRIU_CACHE[N] = np.triu_indices(N, 1)
    i, j = _TRIU_CACHE[N]
    dm = m[i] - m[j]
    s = np.sqrt(2.0 * (v[i] + v[j]))
    u = dm / s
    val = dm * erf(u) + s * INV_SQRT_PI * np.exp(-u * u)
    return diag + 2.0 * float(np.sum(w[i] * w[j] * val))
