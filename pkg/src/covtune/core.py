"""Domain types and the coverage/group algebra everything else builds on.

A tuning experiment is a sequence of trials; each trial ran the engine
under one configuration and covered a set of program branches, recorded
as a fixed-length bitset. Groups of trials are analyzed through the OR
of their bitsets (accumulated coverage) and the coverage gained by
merging groups (complementarity).

Coverage bitsets are packed into 64-bit words so popcount and OR are
word-parallel; experiments reach thousands of trials over tens of
thousands of branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping

import numpy as np

from .errors import DomainError, InvalidGroupError, UnknownParameterError, VectorLengthError

ParamKind = Literal["binary", "continuous", "nominal"]

# A parameter value: bool for binary, int/float for continuous, str for
# nominal, None when unset (the engine default applies).
ParamValue = bool | int | float | str | None

UNSET: ParamValue = None

_WORD_BITS = 64


def _n_words(n_bits: int) -> int:
    return (n_bits + _WORD_BITS - 1) // _WORD_BITS


@dataclass(frozen=True)
class ParameterDef:
    """One tunable engine parameter: identity, kind, default, and domain."""

    name: str
    kind: ParamKind
    label: str = ""
    default: ParamValue = None
    domain: tuple = ()
    description: str = ""

    def __post_init__(self):
        if not self.name:
            raise DomainError("parameter name must be non-empty")
        if self.kind == "binary":
            dom = tuple(self.domain) if self.domain else (True, False)
            if not dom or len(set(dom)) != len(dom) or not all(isinstance(v, bool) for v in dom):
                raise DomainError(f"{self.name}: binary domain must be a subset of {{true, false}}")
            object.__setattr__(self, "domain", dom)
        elif self.kind == "continuous":
            if len(self.domain) != 2:
                raise DomainError(f"{self.name}: continuous domain must be [lo, hi]")
            lo, hi = float(self.domain[0]), float(self.domain[1])
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise DomainError(f"{self.name}: continuous bounds must be finite")
            if lo > hi:
                raise DomainError(f"{self.name}: continuous range has lo > hi")
            object.__setattr__(self, "domain", (lo, hi))
        elif self.kind == "nominal":
            values = tuple(self.domain)
            if not values:
                raise DomainError(f"{self.name}: nominal domain must be non-empty")
            if len(set(values)) != len(values):
                raise DomainError(f"{self.name}: nominal domain has duplicates")
            if not all(isinstance(v, str) for v in values):
                raise DomainError(f"{self.name}: nominal values must be strings")
            object.__setattr__(self, "domain", values)
        else:
            raise DomainError(f"{self.name}: unknown kind {self.kind!r}")
        if self.default is not None and not self.contains(self.default):
            raise DomainError(f"{self.name}: default {self.default!r} outside domain")

    def contains(self, value: ParamValue) -> bool:
        """Whether a non-unset value lies in this parameter's domain."""
        if value is None:
            return True
        if self.kind == "binary":
            return isinstance(value, bool) and value in self.domain
        if self.kind == "continuous":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                return False
            lo, hi = self.domain
            return lo <= float(value) <= hi
        return isinstance(value, str) and value in self.domain

    def validate_value(self, value: ParamValue) -> None:
        if not self.contains(value):
            raise DomainError(f"{self.name}: value {value!r} outside domain")


@dataclass(frozen=True)
class AuditRecord:
    """One applied refinement, kept on the space it produced."""

    plan: object
    applied_at: str


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered list of parameter definitions with unique names."""

    params: tuple[ParameterDef, ...]
    audit: tuple[AuditRecord, ...] = ()

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise DomainError("parameter names must be unique")
        object.__setattr__(self, "params", tuple(self.params))

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def __getitem__(self, name: str) -> ParameterDef:
        for p in self.params:
            if p.name == name:
                return p
        raise UnknownParameterError(f"unknown parameter {name!r}")

    def __contains__(self, name: str) -> bool:
        return any(p.name == name for p in self.params)

    def counts_by_kind(self) -> dict[str, int]:
        counts = {"binary": 0, "continuous": 0, "nominal": 0}
        for p in self.params:
            counts[p.kind] += 1
        return counts


@dataclass(frozen=True)
class Configuration:
    """A full assignment of values to parameters; missing keys mean unset."""

    values: Mapping[str, ParamValue]

    def __post_init__(self):
        object.__setattr__(self, "values", dict(self.values))

    def get(self, name: str) -> ParamValue:
        return self.values.get(name)

    def validate(self, space: ParameterSpace) -> None:
        for name, value in self.values.items():
            if name not in space:
                raise UnknownParameterError(f"unknown parameter {name!r} in configuration")
            space[name].validate_value(value)


class CoverageVector:
    """Fixed-length branch bitset packed into 64-bit words."""

    __slots__ = ("words", "n_bits")

    def __init__(self, words: np.ndarray, n_bits: int):
        if words.dtype != np.uint64 or words.shape != (_n_words(n_bits),):
            raise VectorLengthError("words array does not match bit length")
        self.words = words
        self.n_bits = n_bits

    @classmethod
    def zeros(cls, n_bits: int) -> "CoverageVector":
        return cls(np.zeros(_n_words(n_bits), dtype=np.uint64), n_bits)

    @classmethod
    def from_indices(cls, indices: Iterable[int], n_bits: int) -> "CoverageVector":
        words = np.zeros(_n_words(n_bits), dtype=np.uint64)
        for j in indices:
            if not 0 <= j < n_bits:
                raise VectorLengthError(f"branch index {j} outside [0, {n_bits})")
            words[j >> 6] |= np.uint64(1) << np.uint64(j & 63)
        return cls(words, n_bits)

    @classmethod
    def from_dense(cls, bits: np.ndarray) -> "CoverageVector":
        bits = np.asarray(bits, dtype=np.uint8)
        n_bits = bits.shape[0]
        padded = np.zeros(_n_words(n_bits) * 8, dtype=np.uint8)
        padded[: (n_bits + 7) // 8] = np.packbits(bits, bitorder="little")
        return cls(padded.view("<u8").astype(np.uint64), n_bits)

    def popcount(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def to_dense(self) -> np.ndarray:
        """Unpacked uint8 array of length n_bits (1 = covered)."""
        raw = np.ascontiguousarray(self.words, dtype="<u8").view(np.uint8)
        return np.unpackbits(raw, bitorder="little")[: self.n_bits]

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.to_dense())

    def __or__(self, other: "CoverageVector") -> "CoverageVector":
        self._check(other)
        return CoverageVector(self.words | other.words, self.n_bits)

    def intersection_count(self, other: "CoverageVector") -> int:
        self._check(other)
        return int(np.bitwise_count(self.words & other.words).sum())

    def union_count(self, other: "CoverageVector") -> int:
        self._check(other)
        return int(np.bitwise_count(self.words | other.words).sum())

    def _check(self, other: "CoverageVector") -> None:
        if self.n_bits != other.n_bits:
            raise VectorLengthError(
                f"vector lengths differ: {self.n_bits} vs {other.n_bits}"
            )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CoverageVector)
            and self.n_bits == other.n_bits
            and bool(np.array_equal(self.words, other.words))
        )

    def __hash__(self):
        return hash((self.n_bits, self.words.tobytes()))

    def __repr__(self):
        return f"CoverageVector(n_bits={self.n_bits}, popcount={self.popcount()})"


@dataclass(frozen=True)
class Trial:
    """One engine run: configuration, coverage value, coverage bitset."""

    id: int
    config: Configuration
    coverage_value: int
    coverage: CoverageVector

    def __post_init__(self):
        if self.coverage_value != self.coverage.popcount():
            raise DomainError(
                f"trial {self.id}: coverage value {self.coverage_value} "
                f"!= bitset popcount {self.coverage.popcount()}"
            )

    @property
    def failed(self) -> bool:
        return self.coverage_value == 0


@dataclass(frozen=True)
class SourceLocation:
    file: str
    line: int

    def __post_init__(self):
        if self.line < 1:
            raise DomainError(f"line number must be >= 1, got {self.line}")


class Experiment:
    """A single tuner run: parameter space plus ordered trials.

    Branch ids are dense integers 0..n_branches-1; the original external
    ids live in `branch_ids`. Immutable after construction; all
    operations over it are pure.
    """

    def __init__(
        self,
        space: ParameterSpace,
        trials: Iterable[Trial],
        n_branches: int,
        branch_locations: Mapping[int, SourceLocation] | None = None,
        source_root: Path | None = None,
        branch_ids: Iterable[str] | None = None,
        sources: Mapping[str, str] | None = None,
        warnings: Iterable[str] = (),
    ):
        self.space = space
        self.trials = tuple(trials)
        self.n_branches = n_branches
        self.branch_locations = dict(branch_locations or {})
        self.source_root = Path(source_root) if source_root is not None else None
        self.branch_ids = (
            tuple(branch_ids)
            if branch_ids is not None
            else tuple(str(j) for j in range(n_branches))
        )
        self.sources = dict(sources) if sources is not None else None
        self.warnings = tuple(warnings)

        if len(self.branch_ids) != n_branches:
            raise DomainError("branch id map length != n_branches")
        for i, trial in enumerate(self.trials, start=1):
            if trial.id != i:
                raise DomainError(f"trial ids must be 1..N_T contiguous; got {trial.id} at position {i}")
            if trial.coverage.n_bits != n_branches:
                raise VectorLengthError(f"trial {trial.id}: vector length != n_branches")
            trial.config.validate(space)
        self.unlocated = frozenset(
            j for j in range(n_branches) if j not in self.branch_locations
        )
        self._matrix: np.ndarray | None = None

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    def trial(self, trial_id: int) -> Trial:
        if not 1 <= trial_id <= self.n_trials:
            raise InvalidGroupError(f"unknown trial id {trial_id}")
        return self.trials[trial_id - 1]

    def coverage_matrix(self) -> np.ndarray:
        """(N_T, n_words) packed uint64 matrix, row i-1 = trial i."""
        if self._matrix is None:
            self._matrix = np.stack([t.coverage.words for t in self.trials])
        return self._matrix

    def coverage_values(self) -> np.ndarray:
        return np.array([t.coverage_value for t in self.trials], dtype=np.int64)

    def param_values(self, name: str) -> list[ParamValue]:
        """Per-trial values of one parameter, None where unset."""
        if name not in self.space:
            raise UnknownParameterError(f"unknown parameter {name!r}")
        return [t.config.get(name) for t in self.trials]


@dataclass(frozen=True)
class TrialGroup:
    """A named subset of trial ids."""

    name: str
    member_ids: frozenset[int]
    origin: Literal["builtin", "lasso", "table-selection", "parameter-value", "predicate"] = "predicate"

    def __post_init__(self):
        object.__setattr__(self, "member_ids", frozenset(self.member_ids))
        if not self.member_ids:
            raise InvalidGroupError(f"group {self.name!r} must be non-empty")

    def __len__(self):
        return len(self.member_ids)

    def sorted_ids(self) -> list[int]:
        return sorted(self.member_ids)


def _check_group(group: TrialGroup, exp: Experiment) -> None:
    bad = [i for i in group.member_ids if not 1 <= i <= exp.n_trials]
    if bad:
        raise InvalidGroupError(
            f"group {group.name!r} has unknown trial ids {sorted(bad)[:5]}"
        )


def group_vector(group: TrialGroup, exp: Experiment) -> CoverageVector:
    """OR of the members' coverage vectors."""
    _check_group(group, exp)
    rows = np.fromiter(sorted(group.member_ids), dtype=np.int64) - 1
    words = np.bitwise_or.reduce(exp.coverage_matrix()[rows], axis=0)
    return CoverageVector(np.ascontiguousarray(words, dtype=np.uint64), exp.n_branches)


def accum(group: TrialGroup, exp: Experiment) -> int:
    """Accumulated coverage: popcount of the group's merged vector."""
    return group_vector(group, exp).popcount()


def union_group(g1: TrialGroup, g2: TrialGroup, name: str | None = None) -> TrialGroup:
    return TrialGroup(
        name=name or f"{g1.name} + {g2.name}",
        member_ids=g1.member_ids | g2.member_ids,
        origin="predicate",
    )


def complementarity(g1: TrialGroup, g2: TrialGroup, exp: Experiment) -> int:
    """Coverage gained by merging two groups beyond the better one alone."""
    a1 = accum(g1, exp)
    a2 = accum(g2, exp)
    merged = accum(union_group(g1, g2), exp)
    return merged - max(a1, a2)


def jaccard_distance(a: CoverageVector, b: CoverageVector) -> float:
    """1 - |a AND b| / |a OR b|; two all-zero vectors are at distance 0."""
    inter = a.intersection_count(b)
    union = a.popcount() + b.popcount() - inter
    if union == 0:
        return 0.0
    return 1.0 - inter / union


def branch_frequency(group: TrialGroup, exp: Experiment) -> np.ndarray:
    """Per-branch count of member trials covering it (indexed by dense id)."""
    _check_group(group, exp)
    freq = np.zeros(exp.n_branches, dtype=np.int64)
    for i in group.sorted_ids():
        freq += exp.trials[i - 1].coverage.to_dense()
    return freq
