"""Shared value-bucket scheme for parameter values.

Effect reports, point coloring, and parameter-value groups all discretize
parameter values the same way: binary and nominal parameters bucket per
value plus "unset"; continuous parameters bucket into deciles of the
observed values, merged until every bucket holds at least MIN_BUCKET_TRIALS
trials. Keeping the scheme in one place guarantees the modules agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Experiment, ParamValue, ParameterDef
from .errors import UnknownBucketError

MIN_BUCKET_TRIALS = 10
UNSET_LABEL = "unset"


@dataclass(frozen=True)
class ValueBucket:
    """One value class of a parameter: a concrete value, a closed range, or unset."""

    param: str
    label: str
    is_unset: bool = False
    value: ParamValue = None
    lo: float | None = None
    hi: float | None = None

    def contains(self, v: ParamValue) -> bool:
        if v is None:
            return self.is_unset
        if self.is_unset:
            return False
        if self.lo is not None:
            return self.lo <= float(v) <= self.hi
        return v == self.value


def _format_bound(x: float) -> str:
    return f"{x:g}"


def _continuous_buckets(param: ParameterDef, observed: list[float]) -> list[ValueBucket]:
    values = np.sort(np.asarray(observed, dtype=float))
    n = values.shape[0]
    if n == 0:
        return []
    # Equal-count decile chunks, then merge left to right any chunk that is
    # undersized or whose boundary would split a run of equal values.
    target = min(10, n)
    edges = [int(round(k * n / target)) for k in range(target + 1)]
    chunks: list[tuple[int, int]] = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            chunks.append((a, b))
    merged: list[tuple[int, int]] = []
    for a, b in chunks:
        if merged:
            pa, pb = merged[-1]
            if (pb - pa) < MIN_BUCKET_TRIALS or values[a] == values[a - 1]:
                merged[-1] = (pa, b)
                continue
        merged.append((a, b))
    if len(merged) >= 2 and (merged[-1][1] - merged[-1][0]) < MIN_BUCKET_TRIALS:
        a, b = merged.pop()
        pa, _ = merged.pop()
        merged.append((pa, b))
    out = []
    for a, b in merged:
        lo, hi = float(values[a]), float(values[b - 1])
        out.append(
            ValueBucket(
                param=param.name,
                label=f"[{_format_bound(lo)}, {_format_bound(hi)}]",
                lo=lo,
                hi=hi,
            )
        )
    return out


def buckets_for(exp: Experiment, param: str) -> list[ValueBucket]:
    """Bucket scheme of one parameter over an experiment; unset comes last."""
    pdef = exp.space[param]
    if pdef.kind == "binary":
        buckets = [
            ValueBucket(param=param, label="true", value=True),
            ValueBucket(param=param, label="false", value=False),
        ]
    elif pdef.kind == "nominal":
        buckets = [ValueBucket(param=param, label=v, value=v) for v in pdef.domain]
    else:
        observed = [float(v) for v in exp.param_values(param) if v is not None]
        buckets = _continuous_buckets(pdef, observed)
    buckets.append(ValueBucket(param=param, label=UNSET_LABEL, is_unset=True))
    return buckets


def bucket_index_of(buckets: list[ValueBucket], v: ParamValue) -> int:
    """Index of the bucket holding a value.

    Continuous values falling between two buckets (or outside the observed
    range) are assigned to the nearest bucket toward the interior: the first
    bucket whose upper bound is >= v, else the last range bucket.
    """
    if v is None:
        for i, b in enumerate(buckets):
            if b.is_unset:
                return i
        raise UnknownBucketError("no unset bucket in scheme")
    for i, b in enumerate(buckets):
        if b.contains(v):
            return i
    range_idx = [i for i, b in enumerate(buckets) if b.lo is not None]
    if not range_idx:
        raise UnknownBucketError(f"value {v!r} matches no bucket")
    x = float(v)
    for i in range_idx:
        if x <= buckets[i].hi:
            return i
    return range_idx[-1]


def assign_buckets(exp: Experiment, param: str) -> tuple[list[ValueBucket], np.ndarray]:
    """Bucket scheme plus the per-trial bucket index of every trial."""
    buckets = buckets_for(exp, param)
    idx = np.array(
        [bucket_index_of(buckets, v) for v in exp.param_values(param)], dtype=np.int64
    )
    return buckets, idx


def default_bucket_index(buckets: list[ValueBucket], pdef: ParameterDef) -> int:
    """Bucket containing the parameter default; the unset bucket when absent."""
    if pdef.default is None:
        return bucket_index_of(buckets, None)
    return bucket_index_of(buckets, pdef.default)
