"""Gibbs variational prediction: scoring-rule driven Bayesian forecasting."""

from __future__ import annotations

__version__ = "0.1.0"
