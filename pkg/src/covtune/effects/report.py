"""Aggregate per-trial attributions into per-parameter and per-value effects.

A value bucket's effect is the mean attribution over the trials in that
bucket; a parameter's effect is the trial-count-weighted mean of its
bucket effects. Buckets whose mean effect exceeds the default value's
bucket are flagged as beating the default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..buckets import ValueBucket, assign_buckets, default_bucket_index
from ..core import Experiment, ParamValue
from ..errors import DomainError
from .gbdt import SurrogateModel, encode_experiment
from .shap import shap_matrix


@dataclass(frozen=True)
class ValueEffect:
    bucket: ValueBucket
    mean_effect: float
    trial_count: int
    representative: ParamValue = None
    is_default_bucket: bool = False
    beats_default: bool = False


@dataclass(frozen=True)
class ParamEffect:
    param: str
    kind: str
    mean_effect: float
    trial_count: int
    values: tuple[ValueEffect, ...]

    def beats_default(self) -> tuple[str, ...]:
        return tuple(v.bucket.label for v in self.values if v.beats_default)


@dataclass(frozen=True)
class EffectReport:
    base_value: float
    params: tuple[ParamEffect, ...]

    def __getitem__(self, name: str) -> ParamEffect:
        for p in self.params:
            if p.param == name:
                return p
        raise KeyError(name)

    def ranked(self) -> list[ParamEffect]:
        return sorted(self.params, key=lambda p: (-abs(p.mean_effect), p.param))


def _representative(exp: Experiment, bucket: ValueBucket) -> ParamValue:
    if bucket.is_unset:
        return None
    if bucket.lo is None:
        return bucket.value
    inside = [
        float(v)
        for v in exp.param_values(bucket.param)
        if v is not None and bucket.lo <= float(v) <= bucket.hi
    ]
    return float(np.median(inside)) if inside else (bucket.lo + bucket.hi) / 2.0


def build_effect_report(exp: Experiment, model: SurrogateModel) -> EffectReport:
    """Per-trial Shapley attributions folded into the per-value effect table."""
    if model.space is not exp.space and model.space != exp.space:
        raise DomainError("model was fitted on a different parameter space")
    X = encode_experiment(exp, model.encoding)
    phi = shap_matrix(model, X)
    return aggregate_effects(exp, phi, model.base_value)


def aggregate_effects(exp: Experiment, phi: np.ndarray, base_value: float) -> EffectReport:
    """Fold a (n_trials, n_params) attribution matrix into the report."""
    params: list[ParamEffect] = []
    for pi, pdef in enumerate(exp.space.params):
        buckets, idx = assign_buckets(exp, pdef.name)
        default_idx = default_bucket_index(buckets, pdef)
        effects: list[tuple[int, float, int]] = []
        for bi in range(len(buckets)):
            members = np.flatnonzero(idx == bi)
            if members.size == 0:
                continue
            effects.append((bi, float(phi[members, pi].mean()), int(members.size)))
        default_effect = 0.0
        for bi, mean, _count in effects:
            if bi == default_idx:
                default_effect = mean
        values = tuple(
            ValueEffect(
                bucket=buckets[bi],
                mean_effect=mean,
                trial_count=count,
                representative=_representative(exp, buckets[bi]),
                is_default_bucket=bi == default_idx,
                beats_default=mean > default_effect,
            )
            for bi, mean, count in effects
        )
        total = sum(v.trial_count for v in values)
        weighted = sum(v.mean_effect * v.trial_count for v in values) / total
        params.append(
            ParamEffect(
                param=pdef.name,
                kind=pdef.kind,
                mean_effect=weighted,
                trial_count=total,
                values=values,
            )
        )
    return EffectReport(base_value=base_value, params=tuple(params))


def low_effect_parameters(report: EffectReport, threshold: float = 0.3) -> set[str]:
    """Parameters whose absolute mean effect is below the threshold."""
    if threshold < 0:
        raise DomainError("threshold must be non-negative")
    return {p.param for p in report.params if abs(p.mean_effect) < threshold}
