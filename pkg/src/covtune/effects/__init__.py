"""Surrogate modeling and per-parameter effect attribution."""

from .gbdt import FeatureEncoding, SurrogateHyper, SurrogateModel, TreeArrays, fit_surrogate
from .report import (
    EffectReport,
    ParamEffect,
    ValueEffect,
    aggregate_effects,
    build_effect_report,
    low_effect_parameters,
)
from .shap import shap_matrix, shapley_attribution

__all__ = [
    "FeatureEncoding",
    "SurrogateHyper",
    "SurrogateModel",
    "TreeArrays",
    "fit_surrogate",
    "EffectReport",
    "ParamEffect",
    "ValueEffect",
    "aggregate_effects",
    "build_effect_report",
    "low_effect_parameters",
    "shap_matrix",
    "shapley_attribution",
]
