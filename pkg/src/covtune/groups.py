"""Trial-group lifecycle, builtin groups, and pairwise group matrices.

Three builtin groups always exist and cannot be touched: All, plus the
top and bottom 10% of trials by coverage value (size rounded half-up,
ties broken toward lower trial ids). User groups come from lasso or
table selections, parameter-value predicates, or arbitrary id sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .buckets import ValueBucket, bucket_index_of, buckets_for
from .core import Experiment, ParamValue, TrialGroup, complementarity
from .errors import (
    BuiltinGroupError,
    DuplicateGroupError,
    EmptyGroupError,
    InvalidGroupError,
    UnknownBucketError,
    UnknownGroupError,
)

ALL = "All"
TOP10 = "Top 10%"
BOTTOM10 = "Bottom 10%"
BUILTIN_NAMES = (ALL, TOP10, BOTTOM10)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def builtin_groups(exp: Experiment) -> dict[str, TrialGroup]:
    """All / Top 10% / Bottom 10%, a pure function of the experiment."""
    n = exp.n_trials
    size = max(1, _round_half_up(0.1 * n))
    by_cov = sorted(exp.trials, key=lambda t: (-t.coverage_value, t.id))
    top = frozenset(t.id for t in by_cov[:size])
    by_cov_asc = sorted(exp.trials, key=lambda t: (t.coverage_value, t.id))
    bottom = frozenset(t.id for t in by_cov_asc[:size])
    return {
        ALL: TrialGroup(name=ALL, member_ids=frozenset(range(1, n + 1)), origin="builtin"),
        TOP10: TrialGroup(name=TOP10, member_ids=top, origin="builtin"),
        BOTTOM10: TrialGroup(name=BOTTOM10, member_ids=bottom, origin="builtin"),
    }


@dataclass
class GroupStore:
    """Named trial groups of one session; builtins immutable, single writer."""

    exp: Experiment
    groups: dict[str, TrialGroup] = field(default_factory=dict)
    active: str | None = None

    def __post_init__(self):
        builtins = builtin_groups(self.exp)
        self.groups = {**builtins, **self.groups}

    def __getitem__(self, name: str) -> TrialGroup:
        if name not in self.groups:
            raise UnknownGroupError(f"unknown group {name!r}")
        return self.groups[name]

    def __contains__(self, name: str) -> bool:
        return name in self.groups

    def names(self) -> list[str]:
        return list(self.groups)

    def create(self, name: str, member_ids, origin: str = "table-selection") -> TrialGroup:
        if name in self.groups:
            raise DuplicateGroupError(f"group {name!r} already exists")
        ids = frozenset(int(i) for i in member_ids)
        if not ids:
            raise EmptyGroupError("a group needs at least one trial")
        bad = [i for i in ids if not 1 <= i <= self.exp.n_trials]
        if bad:
            raise InvalidGroupError(f"unknown trial ids {sorted(bad)[:5]}")
        group = TrialGroup(name=name, member_ids=ids, origin=origin)
        self.groups[name] = group
        return group

    def rename(self, old: str, new: str) -> TrialGroup:
        if old in BUILTIN_NAMES:
            raise BuiltinGroupError(f"builtin group {old!r} cannot be renamed")
        if old not in self.groups:
            raise UnknownGroupError(f"unknown group {old!r}")
        if new in self.groups:
            raise DuplicateGroupError(f"group {new!r} already exists")
        group = self.groups.pop(old)
        renamed = TrialGroup(name=new, member_ids=group.member_ids, origin=group.origin)
        self.groups[new] = renamed
        if self.active == old:
            self.active = new
        return renamed

    def delete(self, name: str) -> None:
        if name in BUILTIN_NAMES:
            raise BuiltinGroupError(f"builtin group {name!r} cannot be deleted")
        if name not in self.groups:
            raise UnknownGroupError(f"unknown group {name!r}")
        del self.groups[name]
        if self.active == name:
            self.active = None

    def set_active(self, name: str | None) -> None:
        if name is not None and name not in self.groups:
            raise UnknownGroupError(f"unknown group {name!r}")
        self.active = name


def group_by_parameter_value(
    exp: Experiment, param: str, bucket: ParamValue | tuple[float, float] | ValueBucket
) -> TrialGroup:
    """Trials whose value for `param` falls in the bucket; empty -> error.

    The bucket may be a concrete value, the string "unset", a (lo, hi)
    range for continuous parameters, or a ValueBucket from the shared
    scheme.
    """
    pdef = exp.space[param]
    if isinstance(bucket, ValueBucket):
        vb = bucket
    elif isinstance(bucket, tuple):
        if pdef.kind != "continuous":
            raise UnknownBucketError(f"{param}: range buckets need a continuous parameter")
        lo, hi = float(bucket[0]), float(bucket[1])
        vb = ValueBucket(param=param, label=f"[{lo:g}, {hi:g}]", lo=lo, hi=hi)
    elif bucket == "unset" or bucket is None:
        vb = ValueBucket(param=param, label="unset", is_unset=True)
    else:
        if pdef.kind == "continuous":
            value = float(bucket)
        elif pdef.kind == "binary":
            if isinstance(bucket, str):
                if bucket not in ("true", "false"):
                    raise UnknownBucketError(f"{param}: bad binary bucket {bucket!r}")
                bucket = bucket == "true"
            value = bool(bucket)
        else:
            value = bucket
        if not pdef.contains(value):
            raise UnknownBucketError(f"{param}: value {bucket!r} outside domain")
        vb = ValueBucket(param=param, label=str(bucket), value=value)

    members = [
        t.id for t, v in zip(exp.trials, exp.param_values(param)) if vb.contains(v)
    ]
    if not members:
        raise EmptyGroupError(f"no trials have {param} in bucket {vb.label!r}")
    return TrialGroup(
        name=f"{param}={vb.label}", member_ids=frozenset(members), origin="parameter-value"
    )


@dataclass(frozen=True)
class GroupMatrix:
    mode: str  # "difference" | "union"
    labels: tuple[str, ...]
    cells: np.ndarray  # symmetric int matrix, zero diagonal


def group_matrix(store: GroupStore, exp: Experiment, mode: str) -> GroupMatrix:
    """Pairwise heatmap: union = complementarity, difference = count of
    statistically different parameters (post-correction)."""
    from .compare import parameter_tests  # local import to avoid a cycle

    if mode not in ("difference", "union"):
        raise UnknownBucketError(f"unknown matrix mode {mode!r}")
    labels = tuple(store.names())
    if len(labels) < 2:
        raise InvalidGroupError("group matrix needs at least two groups")
    k = len(labels)
    cells = np.zeros((k, k), dtype=np.int64)
    for a in range(k):
        for b in range(a + 1, k):
            g1, g2 = store[labels[a]], store[labels[b]]
            if mode == "union":
                value = complementarity(g1, g2, exp)
            else:
                results = parameter_tests(g1, g2, exp)
                value = sum(1 for r in results if r.significant)
            cells[a, b] = cells[b, a] = value
    return GroupMatrix(mode=mode, labels=labels, cells=cells)


def partition_by_parameter(exp: Experiment, param: str) -> dict[str, TrialGroup]:
    """One group per non-empty bucket of the shared scheme (a partition)."""
    out = {}
    for vb in buckets_for(exp, param):
        try:
            g = group_by_parameter_value(exp, param, vb)
        except EmptyGroupError:
            continue
        out[vb.label] = g
    return out
