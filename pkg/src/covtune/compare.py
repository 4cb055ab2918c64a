"""Pairwise-group analytics: coverage stats, branch-frequency diffs,
per-parameter statistical tests, and file/line coverage diffs.

Test choices: continuous parameters use the two-sided rank-sum test with
Cliff's delta (unset values excluded); binary/nominal parameters use an
independence test on the value-bucket contingency table (Fisher's exact
test on 2x2 tables when any expected cell is below 5, a fixed-seed Monte
Carlo permutation of the chi-square statistic on larger sparse tables,
plain chi-square otherwise) with Cramer's V. P-values are corrected with
Benjamini-Hochberg across the parameters tested.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from .buckets import assign_buckets
from .core import (
    Experiment,
    TrialGroup,
    accum,
    branch_frequency,
    complementarity,
    group_vector,
    union_group,
)
from .errors import InvalidAlphaError, NoBranchesError

MIN_TESTABLE = 5
_MC_PERMUTATIONS = 9999
_MC_SEED = 20240917


@dataclass(frozen=True)
class GroupStats:
    max: tuple[int, int]
    min: tuple[int, int]
    mean: tuple[float, float]
    accumulated: tuple[int, int]
    merged: int

    @property
    def complementarity(self) -> int:
        return self.merged - max(self.accumulated)


def group_stats(g1: TrialGroup, g2: TrialGroup, exp: Experiment) -> GroupStats:
    def side(g: TrialGroup):
        values = [exp.trial(i).coverage_value for i in g.sorted_ids()]
        return max(values), min(values), float(np.mean(values)), accum(g, exp)

    mx1, mn1, mean1, acc1 = side(g1)
    mx2, mn2, mean2, acc2 = side(g2)
    merged = accum(union_group(g1, g2), exp)
    return GroupStats(
        max=(mx1, mx2),
        min=(mn1, mn2),
        mean=(mean1, mean2),
        accumulated=(acc1, acc2),
        merged=merged,
    )


def frequency_diff(
    g1: TrialGroup, g2: TrialGroup, exp: Experiment
) -> list[tuple[int, int, int]]:
    """(branch, freq in g1, freq in g2) for every branch covered by either
    group, ordered by descending g1 frequency, ties by branch id."""
    f1 = branch_frequency(g1, exp)
    f2 = branch_frequency(g2, exp)
    covered = np.flatnonzero((f1 > 0) | (f2 > 0))
    entries = [(int(b), int(f1[b]), int(f2[b])) for b in covered]
    entries.sort(key=lambda e: (-e[1], e[0]))
    return entries


@dataclass(frozen=True)
class ParamTestResult:
    parameter: str
    statistic: float
    p_value: float
    effect_size: float
    significant: bool
    effect_class: int  # 0-3 stars
    testable: bool = True
    test: str = ""


def _stars(effect_size: float) -> int:
    a = abs(effect_size)
    if a >= 0.5:
        return 3
    if a >= 0.3:
        return 2
    if a >= 0.1:
        return 1
    return 0


def _untestable(param: str, why: str) -> ParamTestResult:
    return ParamTestResult(
        parameter=param,
        statistic=0.0,
        p_value=1.0,
        effect_size=0.0,
        significant=False,
        effect_class=0,
        testable=False,
        test=why,
    )


def _rank_sum(param: str, x: np.ndarray, y: np.ndarray) -> ParamTestResult:
    if x.size < 2 or y.size < 2:
        return _untestable(param, "too-few-set-values")
    if np.all(x == x[0]) and np.all(y == y[0]) and x[0] == y[0]:
        return _untestable(param, "constant-values")
    res = sstats.mannwhitneyu(x, y, alternative="two-sided")
    u1 = float(res.statistic)
    delta = 2.0 * u1 / (x.size * y.size) - 1.0
    return ParamTestResult(
        parameter=param,
        statistic=u1,
        p_value=float(res.pvalue),
        effect_size=delta,
        significant=False,
        effect_class=_stars(delta),
        test="rank-sum",
    )


def _contingency(param: str, idx1: np.ndarray, idx2: np.ndarray, n_buckets: int) -> ParamTestResult:
    table = np.zeros((2, n_buckets), dtype=np.int64)
    for b in range(n_buckets):
        table[0, b] = int((idx1 == b).sum())
        table[1, b] = int((idx2 == b).sum())
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return _untestable(param, "single-bucket")
    n = int(table.sum())
    chi2 = float(sstats.chi2_contingency(table, correction=False).statistic)
    cramers_v = float(np.sqrt(chi2 / (n * (min(table.shape) - 1))))
    expected = sstats.contingency.expected_freq(table)
    if (expected < 5).any():
        if table.shape[1] == 2:
            p = float(sstats.fisher_exact(table).pvalue)
            test = "fisher-exact"
        else:
            rng = np.random.default_rng(_MC_SEED)
            dist = sstats.random_table(table.sum(axis=1), table.sum(axis=0), seed=rng)
            samples = dist.rvs(_MC_PERMUTATIONS)
            stats_mc = ((samples - expected) ** 2 / expected).sum(axis=(1, 2))
            p = float((1 + np.sum(stats_mc >= chi2 - 1e-12)) / (1 + _MC_PERMUTATIONS))
            test = "chi-square-mc"
    else:
        p = float(sstats.chi2_contingency(table, correction=False).pvalue)
        test = "chi-square"
    return ParamTestResult(
        parameter=param,
        statistic=chi2,
        p_value=p,
        effect_size=cramers_v,
        significant=False,
        effect_class=_stars(cramers_v),
        test=test,
    )


def _bh_correct(results: list[ParamTestResult], alpha: float) -> list[ParamTestResult]:
    testable = [(i, r.p_value) for i, r in enumerate(results) if r.testable]
    m = len(testable)
    reject = set()
    if m:
        order = sorted(testable, key=lambda t: t[1])
        k_star = 0
        for rank, (_, p) in enumerate(order, start=1):
            if p <= rank / m * alpha:
                k_star = rank
        for rank, (i, _) in enumerate(order, start=1):
            if rank <= k_star:
                reject.add(i)
    out = []
    for i, r in enumerate(results):
        out.append(
            ParamTestResult(
                parameter=r.parameter,
                statistic=r.statistic,
                p_value=r.p_value,
                effect_size=r.effect_size,
                significant=i in reject,
                effect_class=r.effect_class,
                testable=r.testable,
                test=r.test,
            )
        )
    return out


def parameter_tests(
    g1: TrialGroup, g2: TrialGroup, exp: Experiment, alpha: float = 0.05
) -> list[ParamTestResult]:
    """Per-parameter two-sample tests between the groups' configurations."""
    if not 0.0 < alpha < 1.0:
        raise InvalidAlphaError(f"alpha must be in (0, 1), got {alpha}")
    if g1.member_ids & g2.member_ids:
        warnings.warn(
            f"groups {g1.name!r} and {g2.name!r} overlap; shared trials "
            "contribute to both samples"
        )
    if len(g1) < MIN_TESTABLE or len(g2) < MIN_TESTABLE:
        return [_untestable(p.name, "group-too-small") for p in exp.space.params]

    ids1 = np.array(g1.sorted_ids()) - 1
    ids2 = np.array(g2.sorted_ids()) - 1
    results = []
    for pdef in exp.space.params:
        if pdef.kind == "continuous":
            values = exp.param_values(pdef.name)
            x = np.array([float(values[i]) for i in ids1 if values[i] is not None])
            y = np.array([float(values[i]) for i in ids2 if values[i] is not None])
            results.append(_rank_sum(pdef.name, x, y))
        else:
            buckets, idx = assign_buckets(exp, pdef.name)
            results.append(
                _contingency(pdef.name, idx[ids1], idx[ids2], len(buckets))
            )
    return _bh_correct(results, alpha)


def _file_branches(exp: Experiment) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for b, loc in exp.branch_locations.items():
        out.setdefault(loc.file, []).append(b)
    return out


def file_coverage(group: TrialGroup, exp: Experiment, file: str) -> float:
    """Fraction of the file's branches covered at least once by the group."""
    branches = _file_branches(exp).get(file)
    if not branches:
        raise NoBranchesError(f"file {file!r} has no located branches")
    dense = group_vector(group, exp).to_dense()
    covered = int(dense[np.array(branches)].sum())
    return covered / len(branches)


def _line_branches(exp: Experiment, file: str) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for b, loc in exp.branch_locations.items():
        if loc.file == file:
            out.setdefault(loc.line, []).append(b)
    return out


def line_coverage(group: TrialGroup, exp: Experiment, file: str, line: int) -> float:
    """Mean over the line's branches of the fraction of members covering each."""
    branches = _line_branches(exp, file).get(line)
    if not branches:
        raise NoBranchesError(f"{file}:{line} has no located branches")
    freq = branch_frequency(group, exp)
    return float(np.mean([freq[b] / len(group) for b in branches]))


@dataclass(frozen=True)
class LineDiff:
    file: str
    line: int
    value: float  # line_coverage(g1) - line_coverage(g2), in [-1, 1]


@dataclass(frozen=True)
class FileDiff:
    file: str
    coverage: tuple[float, float]
    value: float  # file_coverage(g1) - file_coverage(g2)


@dataclass(frozen=True)
class CodeDiff:
    files: tuple[FileDiff, ...]
    lines: tuple[LineDiff, ...]


def code_diff(g1: TrialGroup, g2: TrialGroup, exp: Experiment) -> CodeDiff:
    """Signed file- and line-level coverage differences (positive favors g1).

    Zero-difference lines are included with value 0 so the UI can render
    them neutrally.
    """
    by_file = _file_branches(exp)
    freq1 = branch_frequency(g1, exp)
    freq2 = branch_frequency(g2, exp)
    dense1 = group_vector(g1, exp).to_dense()
    dense2 = group_vector(g2, exp).to_dense()
    n1, n2 = len(g1), len(g2)

    files = []
    lines = []
    for file in sorted(by_file):
        branches = np.array(by_file[file])
        c1 = float(dense1[branches].sum() / branches.size)
        c2 = float(dense2[branches].sum() / branches.size)
        files.append(FileDiff(file=file, coverage=(c1, c2), value=c1 - c2))
        for line, line_bs in sorted(_line_branches(exp, file).items()):
            lb = np.array(line_bs)
            l1 = float(np.mean(freq1[lb] / n1))
            l2 = float(np.mean(freq2[lb] / n2))
            lines.append(LineDiff(file=file, line=line, value=l1 - l2))
    return CodeDiff(files=tuple(files), lines=tuple(lines))
