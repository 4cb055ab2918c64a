"""Gradient-boosted regression trees fit from configurations to coverage.

The surrogate is a squared-loss GBDT built in-repo: depth-limited exact
greedy splitting, shrinkage, optional row subsampling. Trees are stored as
flat arrays (children, feature, threshold, leaf value, cover) so the exact
Shapley recursion in `shap.py` can walk them directly.

Parameter encoding: binary -> {0,1}; nominal -> one-hot; continuous -> raw
value with unset imputed to the default (or the domain midpoint without
one). Every parameter also gets an "unset" indicator feature so an absent
value never masquerades as a real one. Features remember which parameter
owns them; attributions are summed back per parameter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import Configuration, Experiment, ParameterSpace
from ..errors import JobError, TooFewTrialsError

MIN_TRIALS = 30


@dataclass(frozen=True)
class SurrogateHyper:
    n_trees: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    min_samples_leaf: int = 10
    subsample: float = 1.0
    min_gain: float = 0.0


@dataclass(frozen=True)
class FeatureEncoding:
    """How parameters map to model features."""

    feature_names: tuple[str, ...]
    owner: tuple[int, ...]  # parameter index per feature
    param_names: tuple[str, ...]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def build_encoding(space: ParameterSpace) -> FeatureEncoding:
    names: list[str] = []
    owner: list[int] = []
    for pi, p in enumerate(space.params):
        if p.kind == "nominal":
            for v in p.domain:
                names.append(f"{p.name}={v}")
                owner.append(pi)
        else:
            names.append(p.name)
            owner.append(pi)
        names.append(f"{p.name}?unset")
        owner.append(pi)
    return FeatureEncoding(
        feature_names=tuple(names), owner=tuple(owner), param_names=space.names
    )


def _impute(p) -> float:
    if p.kind == "binary":
        return 1.0 if p.default else 0.0
    if p.default is not None:
        return float(p.default)
    lo, hi = p.domain
    return (lo + hi) / 2.0


def encode_config(space: ParameterSpace, config: Configuration, enc: FeatureEncoding) -> np.ndarray:
    config.validate(space)
    row = np.zeros(enc.n_features, dtype=np.float64)
    f = 0
    for p in space.params:
        v = config.get(p.name)
        if p.kind == "nominal":
            for dv in p.domain:
                row[f] = 1.0 if v == dv else 0.0
                f += 1
        elif p.kind == "binary":
            row[f] = _impute(p) if v is None else (1.0 if v else 0.0)
            f += 1
        else:
            row[f] = _impute(p) if v is None else float(v)
            f += 1
        row[f] = 1.0 if v is None else 0.0
        f += 1
    return row


def encode_experiment(exp: Experiment, enc: FeatureEncoding) -> np.ndarray:
    return np.stack([encode_config(exp.space, t.config, enc) for t in exp.trials])


@dataclass
class TreeArrays:
    """One regression tree as flat arrays; children are -1 at leaves."""

    children_left: np.ndarray
    children_right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.children_left.shape[0]

    def expected_value(self) -> float:
        """Cover-weighted mean over leaves (= training mean of this tree)."""
        leaves = self.children_left < 0
        return float(
            np.sum(self.value[leaves] * self.cover[leaves]) / np.sum(self.cover[leaves])
        )

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            internal = self.children_left[node] >= 0
            if not internal.any():
                return self.value[node]
            idx = np.flatnonzero(internal)
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.children_left[n], self.children_right[n])


class _TreeBuilder:
    def __init__(self, X: np.ndarray, hyper: SurrogateHyper):
        self.X = X
        self.hyper = hyper
        self.children_left: list[int] = []
        self.children_right: list[int] = []
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.value: list[float] = []
        self.cover: list[float] = []

    def _new_node(self) -> int:
        for arr in (self.children_left, self.children_right, self.feature):
            arr.append(-1)
        self.threshold.append(0.0)
        self.value.append(0.0)
        self.cover.append(0.0)
        return len(self.cover) - 1

    def build(self, rows: np.ndarray, res: np.ndarray) -> TreeArrays:
        self._grow(rows, res, depth=0)
        return TreeArrays(
            children_left=np.array(self.children_left, dtype=np.int64),
            children_right=np.array(self.children_right, dtype=np.int64),
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=np.float64),
            value=np.array(self.value, dtype=np.float64),
            cover=np.array(self.cover, dtype=np.float64),
        )

    def _grow(self, rows: np.ndarray, res: np.ndarray, depth: int) -> int:
        node = self._new_node()
        m = rows.shape[0]
        r = res[rows]
        self.cover[node] = float(m)
        self.value[node] = float(r.mean())
        if depth >= self.hyper.max_depth or m < 2 * self.hyper.min_samples_leaf:
            return node
        split = self._best_split(rows, r)
        if split is None:
            return node
        feat, thr = split
        go_left = self.X[rows, feat] <= thr
        self.feature[node] = feat
        self.threshold[node] = thr
        left = self._grow(rows[go_left], res, depth + 1)
        right = self._grow(rows[~go_left], res, depth + 1)
        self.children_left[node] = left
        self.children_right[node] = right
        return node

    def _best_split(self, rows: np.ndarray, r: np.ndarray):
        m = rows.shape[0]
        min_leaf = self.hyper.min_samples_leaf
        Xn = self.X[rows]
        order = np.argsort(Xn, axis=0, kind="stable")
        xs = np.take_along_axis(Xn, order, axis=0)
        rs = r[order]
        csum = np.cumsum(rs, axis=0)
        total = csum[-1, 0]
        nl = np.arange(1, m, dtype=np.float64)
        sl = csum[:-1]
        sr = total - sl
        score = sl**2 / nl[:, None] + sr**2 / (m - nl)[:, None]
        valid = xs[1:] != xs[:-1]
        valid &= (nl[:, None] >= min_leaf) & ((m - nl)[:, None] >= min_leaf)
        if not valid.any():
            return None
        score = np.where(valid, score, -np.inf)
        flat = int(np.argmax(score))
        pos, feat = divmod(flat, score.shape[1])
        gain = score[pos, feat] - total**2 / m
        if gain <= max(self.hyper.min_gain, 1e-10):
            return None
        a, b = xs[pos, feat], xs[pos + 1, feat]
        thr = a + (b - a) / 2.0
        if thr >= b:
            thr = a
        return feat, float(thr)


@dataclass
class SurrogateModel:
    """Fitted tree ensemble with its feature encoding.

    prediction(x) = f0 + learning_rate * sum of tree outputs;
    base_value + per-feature Shapley attributions = prediction exactly.
    """

    space: ParameterSpace
    encoding: FeatureEncoding
    trees: list[TreeArrays]
    f0: float
    learning_rate: float
    base_value: float
    hyper: SurrogateHyper
    seed: int
    constant: bool = False
    train_r2: float = 1.0
    max_depth: int = 4

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.f0, dtype=np.float64)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def predict(self, config: Configuration) -> float:
        x = encode_config(self.space, config, self.encoding)
        return float(self.predict_matrix(x[None, :])[0])


def fit_surrogate(
    exp: Experiment,
    seed: int = 0,
    hyper: SurrogateHyper = SurrogateHyper(),
    progress: Callable[[float], None] | None = None,
    should_stop: Callable[[], bool] | None = None,
) -> SurrogateModel:
    """Fit the coverage surrogate; deterministic for a fixed seed.

    Failed trials participate with coverage 0. Refuses experiments with
    fewer than 30 trials. A constant coverage column yields a warned
    constant model rather than an error.
    """
    if exp.n_trials < MIN_TRIALS:
        raise TooFewTrialsError(
            f"surrogate needs >= {MIN_TRIALS} trials, got {exp.n_trials}"
        )
    enc = build_encoding(exp.space)
    X = encode_experiment(exp, enc)
    y = exp.coverage_values().astype(np.float64)
    f0 = float(y.mean())

    if np.all(y == y[0]):
        warnings.warn("all coverage values identical; returning a constant model")
        return SurrogateModel(
            space=exp.space,
            encoding=enc,
            trees=[],
            f0=f0,
            learning_rate=hyper.learning_rate,
            base_value=f0,
            hyper=hyper,
            seed=seed,
            constant=True,
            train_r2=1.0,
            max_depth=hyper.max_depth,
        )

    rng = np.random.default_rng(seed)
    res = y - f0
    trees: list[TreeArrays] = []
    n = X.shape[0]
    for k in range(hyper.n_trees):
        if should_stop is not None and should_stop():
            raise JobError("surrogate fit cancelled")
        if hyper.subsample < 1.0:
            size = max(2 * hyper.min_samples_leaf, int(round(hyper.subsample * n)))
            rows = np.sort(rng.choice(n, size=min(size, n), replace=False))
        else:
            rows = np.arange(n)
        tree = _TreeBuilder(X, hyper).build(rows, res)
        res -= hyper.learning_rate * tree.predict(X)
        trees.append(tree)
        if progress is not None:
            progress((k + 1) / hyper.n_trees)

    base = f0 + hyper.learning_rate * sum(t.expected_value() for t in trees)
    sse = float(np.sum(res**2))
    sst = float(np.sum((y - f0) ** 2))
    return SurrogateModel(
        space=exp.space,
        encoding=enc,
        trees=trees,
        f0=f0,
        learning_rate=hyper.learning_rate,
        base_value=base,
        hyper=hyper,
        seed=seed,
        constant=False,
        train_r2=1.0 - sse / sst,
        max_depth=hyper.max_depth,
    )
