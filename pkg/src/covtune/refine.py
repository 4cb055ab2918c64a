"""Auditable parameter-space refinement and iteration metrics.

Refinement happens through explicit plans: drop parameters, exclude
values (or shrink continuous ranges), and reset defaults, each entry
carrying a rationale. Suggestion operations only produce plan fragments
for human review; `apply_plan` is the single mutation point and returns
a new space with an audit record attached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .buckets import assign_buckets
from .compare import ParamTestResult
from .core import (
    AuditRecord,
    Experiment,
    ParamValue,
    ParameterDef,
    ParameterSpace,
    TrialGroup,
    accum,
)
from .effects.report import EffectReport, low_effect_parameters
from .errors import PlanError

SHARE_RATIO = 2.0
FAILED_SHARE = 0.5


@dataclass(frozen=True)
class Exclusion:
    """A value (binary/nominal) or sub-range (continuous) to remove."""

    param: str
    value: ParamValue = None
    lo: float | None = None
    hi: float | None = None

    def describe(self) -> str:
        if self.lo is not None:
            return f"{self.param} in [{self.lo:g}, {self.hi:g}]"
        return f"{self.param}={self.value}"


@dataclass(frozen=True)
class RefinementPlan:
    drop_params: frozenset[str] = frozenset()
    exclude_values: tuple[Exclusion, ...] = ()
    set_defaults: dict[str, ParamValue] = field(default_factory=dict)
    rationale: dict[str, str] = field(default_factory=dict)

    def merged_with(self, other: "RefinementPlan") -> "RefinementPlan":
        return RefinementPlan(
            drop_params=self.drop_params | other.drop_params,
            exclude_values=self.exclude_values + other.exclude_values,
            set_defaults={**self.set_defaults, **other.set_defaults},
            rationale={**self.rationale, **other.rationale},
        )

    @property
    def empty(self) -> bool:
        return not (self.drop_params or self.exclude_values or self.set_defaults)


@dataclass(frozen=True)
class IterationMetrics:
    acc_all: int
    acc_k: dict[int, int]
    n_failed: int


def metrics(exp: Experiment, ks: list[int] = ()) -> IterationMetrics:
    """Accumulated coverage of all trials and of each k-prefix, plus the
    number of failed (zero-coverage) trials."""
    for k in ks:
        if not 1 <= k <= exp.n_trials:
            raise PlanError(f"k={k} outside [1, {exp.n_trials}]")
    all_ids = frozenset(range(1, exp.n_trials + 1))
    acc_all = accum(TrialGroup(name="_all", member_ids=all_ids), exp)
    acc_k = {}
    for k in ks:
        prefix = TrialGroup(name=f"_first{k}", member_ids=frozenset(range(1, k + 1)))
        acc_k[k] = accum(prefix, exp)
    n_failed = sum(1 for t in exp.trials if t.failed)
    return IterationMetrics(acc_all=acc_all, acc_k=acc_k, n_failed=n_failed)


def suggest_low_effect_drops(report: EffectReport, threshold: float = 0.3) -> RefinementPlan:
    """Drop every parameter with |mean effect| below the threshold."""
    drops = low_effect_parameters(report, threshold)
    rationale = {
        f"drop:{p}": (
            f"mean effect {report[p].mean_effect:+.3f} below {threshold:g} "
            "(suggestion threshold, review before applying)"
        )
        for p in sorted(drops)
    }
    return RefinementPlan(drop_params=frozenset(drops), rationale=rationale)


def suggest_default_updates(report: EffectReport) -> RefinementPlan:
    """Move each default to the best value bucket that beats it."""
    defaults: dict[str, ParamValue] = {}
    rationale: dict[str, str] = {}
    for pe in report.params:
        beating = [
            v for v in pe.values if v.beats_default and not v.bucket.is_unset
        ]
        if not beating:
            continue
        best = max(beating, key=lambda v: v.mean_effect)
        if best.representative is None:
            continue
        defaults[pe.param] = best.representative
        rationale[f"default:{pe.param}"] = (
            f"bucket {best.bucket.label!r} has the greatest positive effect "
            f"({best.mean_effect:+.3f}) among values beating the default"
        )
    return RefinementPlan(set_defaults=defaults, rationale=rationale)


def _bucket_share(idx: np.ndarray, bucket: int) -> float:
    return float((idx == bucket).sum() / idx.size)


def suggest_failure_exclusions(
    exp: Experiment,
    failed_group: TrialGroup | None,
    top_group: TrialGroup,
    tests: list[ParamTestResult],
) -> RefinementPlan:
    """Propose excluding value buckets over-represented in failed trials.

    A bucket qualifies when its share among failed trials is at least
    twice its share in the top group and covers at least half the failed
    trials, for parameters the tests flag significant. Suggestions only;
    a human confirms before the fragment enters a plan.
    """
    if failed_group is None or len(failed_group) == 0:
        return RefinementPlan(rationale={"notice": "no failed trials; nothing to exclude"})
    significant = {t.parameter for t in tests if t.significant}
    failed_idx = np.array(failed_group.sorted_ids()) - 1
    top_idx = np.array(top_group.sorted_ids()) - 1

    exclusions: list[Exclusion] = []
    defaults: dict[str, ParamValue] = {}
    rationale: dict[str, str] = {}
    for pdef in exp.space.params:
        if pdef.name not in significant:
            continue
        buckets, idx = assign_buckets(exp, pdef.name)
        for bi, vb in enumerate(buckets):
            if vb.is_unset:
                continue
            share_failed = _bucket_share(idx[failed_idx], bi)
            share_top = _bucket_share(idx[top_idx], bi)
            if share_failed < FAILED_SHARE:
                continue
            if share_top > 0 and share_failed / share_top < SHARE_RATIO:
                continue
            exc = (
                Exclusion(param=pdef.name, lo=vb.lo, hi=vb.hi)
                if vb.lo is not None
                else Exclusion(param=pdef.name, value=vb.value)
            )
            exclusions.append(exc)
            rationale[f"exclude:{exc.describe()}"] = (
                f"used by {share_failed:.0%} of failed trials vs "
                f"{share_top:.0%} of the top group (2x-share suggestion rule, "
                "review before applying)"
            )
            if pdef.default is not None and vb.contains(pdef.default):
                remaining = _most_common_remaining(exp, pdef, buckets, idx, top_idx, bi)
                if remaining is not None:
                    defaults[pdef.name] = remaining
                    rationale[f"default:{pdef.name}"] = (
                        "excluded bucket contained the default; picked the "
                        "top group's most common remaining value"
                    )
    return RefinementPlan(
        exclude_values=tuple(exclusions), set_defaults=defaults, rationale=rationale
    )


def _most_common_remaining(exp, pdef, buckets, idx, top_idx, excluded_bi):
    counts = {}
    for bi in np.unique(idx[top_idx]):
        if bi == excluded_bi or buckets[bi].is_unset:
            continue
        counts[int(bi)] = int((idx[top_idx] == bi).sum())
    if not counts:
        return None
    best = max(counts, key=lambda b: (counts[b], -b))
    vb = buckets[best]
    if vb.lo is not None:
        inside = [
            float(v)
            for i, v in enumerate(exp.param_values(pdef.name))
            if i in set(top_idx) and v is not None and vb.contains(v)
        ]
        return float(np.median(inside)) if inside else (vb.lo + vb.hi) / 2.0
    return vb.value


def _apply_exclusion(pdef: ParameterDef, exc: Exclusion) -> ParameterDef:
    if pdef.kind == "continuous":
        if exc.lo is None or exc.hi is None:
            raise PlanError(f"{pdef.name}: continuous exclusions need a [lo, hi] range")
        lo, hi = pdef.domain
        a, b = float(exc.lo), float(exc.hi)
        if a > lo and b < hi:
            raise PlanError(
                f"{pdef.name}: exclusion [{a:g}, {b:g}] would punch a hole in "
                f"[{lo:g}, {hi:g}]; only end-shrinking exclusions are allowed"
            )
        new_lo, new_hi = lo, hi
        if a <= lo:
            new_lo = max(lo, math.nextafter(b, math.inf))
        if b >= hi:
            new_hi = min(hi, math.nextafter(a, -math.inf))
        if new_lo > new_hi:
            raise PlanError(f"{pdef.name}: exclusion empties the domain")
        return replace(pdef, domain=(new_lo, new_hi), default=pdef.default)
    if exc.value is None:
        raise PlanError(f"{pdef.name}: exclusion needs a concrete value")
    if pdef.kind == "binary" and not isinstance(exc.value, bool):
        raise PlanError(f"{pdef.name}: binary exclusion must be a boolean")
    if exc.value not in pdef.domain:
        raise PlanError(f"{pdef.name}: value {exc.value!r} not in domain")
    values = tuple(v for v in pdef.domain if v != exc.value)
    if not values:
        raise PlanError(f"{pdef.name}: exclusion empties the domain")
    return replace(pdef, domain=values, default=pdef.default)


def apply_plan(space: ParameterSpace, plan: RefinementPlan) -> ParameterSpace:
    """Pure application of a plan: returns a new space, audit attached."""
    known = set(space.names)
    for p in plan.drop_params:
        if p not in known:
            raise PlanError(f"drop references unknown parameter {p!r}")
    for exc in plan.exclude_values:
        if exc.param not in known:
            raise PlanError(f"exclusion references unknown parameter {exc.param!r}")
        if exc.param in plan.drop_params:
            raise PlanError(f"{exc.param!r} is both dropped and value-excluded")
    for p in plan.set_defaults:
        if p not in known:
            raise PlanError(f"default update references unknown parameter {p!r}")

    new_params = []
    for pdef in space.params:
        if pdef.name in plan.drop_params:
            continue
        for exc in plan.exclude_values:
            if exc.param == pdef.name:
                pdef = _apply_exclusion(pdef, exc)
        if pdef.name in plan.set_defaults:
            new_default = plan.set_defaults[pdef.name]
            if not pdef.contains(new_default):
                raise PlanError(
                    f"{pdef.name}: new default {new_default!r} outside the "
                    "post-exclusion domain"
                )
            pdef = replace(pdef, default=new_default)
        elif pdef.default is not None and not pdef.contains(pdef.default):
            raise PlanError(
                f"{pdef.name}: exclusion removes the current default; the plan "
                "must set a new default for it"
            )
        new_params.append(pdef)
    record = AuditRecord(
        plan=plan, applied_at=datetime.now(timezone.utc).isoformat()
    )
    return ParameterSpace(params=tuple(new_params), audit=space.audit + (record,))
