from __future__ import annotations

from .base import PredictiveModel, ScoreEval
from .bnn import BnnModel, BnnParams, bnn_forward
from .garch import GarchModel, GarchParams, garch_filter
from .gaussian import GaussianMeanModel
from .mixture import MixtureModel, MixtureParams, mixture_predictive, stick_breaking

__all__ = [
    "BnnModel", "BnnParams", "GarchModel", "GarchParams", "GaussianMeanModel", "MixtureModel",
    "MixtureParams", "PredictiveModel", "ScoreEval", "bnn_forward", "garch_filter",
    "mixture_predictive", "stick_breaking",
]
