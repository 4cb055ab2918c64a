from __future__ import annotations

import numpy as np
import pytest

from covtune.core import Configuration, ParameterDef, ParameterSpace
from covtune.effects.gbdt import (
    SurrogateHyper,
    build_encoding,
    encode_config,
    encode_experiment,
    fit_surrogate,
)
from covtune.errors import TooFewTrialsError

from conftest import build_experiment


def synthetic_main_effect_experiment(rng, n=400):
    """coverage = 50 + 30*[S=dfs] + noise(sigma=1), plus an inert parameter."""
    space = ParameterSpace(
        params=(
            ParameterDef(name="S", kind="nominal", default="bfs", domain=("bfs", "dfs")),
            ParameterDef(name="Z", kind="binary", default=False),
        )
    )
    rows = []
    for _ in range(n):
        s = "dfs" if rng.random() < 0.5 else "bfs"
        z = bool(rng.random() < 0.5)
        mean = 50 + (30 if s == "dfs" else 0)
        cov = max(0, int(round(mean + rng.normal(0, 1))))
        covered = rng.choice(200, size=min(cov, 200), replace=False)
        rows.append(({"S": s, "Z": z}, covered))
    return build_experiment(space, rows, 200)


def test_refuses_too_few_trials(small_space):
    exp = build_experiment(small_space, [({}, [0])] * 10, 5)
    with pytest.raises(TooFewTrialsError):
        fit_surrogate(exp)


def test_constant_coverage_returns_constant_model_with_warning(small_space):
    rows = [({}, range(100))] * 40
    exp = build_experiment(small_space, rows, 200)
    with pytest.warns(UserWarning, match="constant"):
        model = fit_surrogate(exp)
    assert model.constant
    assert model.base_value == 100.0
    x = encode_config(exp.space, Configuration(values={}), model.encoding)
    assert model.predict_matrix(x[None, :])[0] == 100.0


def test_training_r2_on_main_effect_data():
    rng = np.random.default_rng(0)
    exp = synthetic_main_effect_experiment(rng)
    model = fit_surrogate(exp, seed=0)
    assert model.train_r2 >= 0.8


def test_fit_is_deterministic_for_fixed_seed():
    rng = np.random.default_rng(1)
    exp = synthetic_main_effect_experiment(rng, n=120)
    hyper = SurrogateHyper(n_trees=20, subsample=0.7)
    m1 = fit_surrogate(exp, seed=42, hyper=hyper)
    m2 = fit_surrogate(exp, seed=42, hyper=hyper)
    X = encode_experiment(exp, m1.encoding)
    assert np.array_equal(m1.predict_matrix(X), m2.predict_matrix(X))
    for t1, t2 in zip(m1.trees, m2.trees):
        assert np.array_equal(t1.feature, t2.feature)
        assert np.array_equal(t1.threshold, t2.threshold)
        assert np.array_equal(t1.value, t2.value)


def test_prediction_matches_manual_tree_walk():
    rng = np.random.default_rng(2)
    exp = synthetic_main_effect_experiment(rng, n=100)
    model = fit_surrogate(exp, seed=0, hyper=SurrogateHyper(n_trees=5))
    X = encode_experiment(exp, model.encoding)

    def walk(tree, x):
        node = 0
        while tree.children_left[node] >= 0:
            f = tree.feature[node]
            node = (
                tree.children_left[node]
                if x[f] <= tree.threshold[node]
                else tree.children_right[node]
            )
        return tree.value[node]

    for i in range(0, 100, 7):
        expected = model.f0 + model.learning_rate * sum(
            walk(t, X[i]) for t in model.trees
        )
        assert model.predict_matrix(X[i : i + 1])[0] == pytest.approx(expected, rel=1e-12)


def test_encoding_unset_indicator_and_imputation():
    space = ParameterSpace(
        params=(
            ParameterDef(name="c", kind="continuous", default=4.0, domain=(0.0, 10.0)),
            ParameterDef(name="n", kind="nominal", domain=("a", "b")),
            ParameterDef(name="b", kind="binary", default=True),
        )
    )
    enc = build_encoding(space)
    assert enc.feature_names == ("c", "c?unset", "n=a", "n=b", "n?unset", "b", "b?unset")
    assert enc.owner == (0, 0, 1, 1, 1, 2, 2)
    x = encode_config(space, Configuration(values={}), enc)
    # unset: continuous imputes the default, nominal one-hot all zero,
    # binary imputes the default; all indicators raised
    assert x.tolist() == [4.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]
    x2 = encode_config(space, Configuration(values={"c": 2.5, "n": "b", "b": False}), enc)
    assert x2.tolist() == [2.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]


def test_failed_trials_included_as_zero_coverage():
    space = ParameterSpace(params=(ParameterDef(name="k", kind="binary", default=False),))
    rows = []
    rng = np.random.default_rng(3)
    for i in range(60):
        k = i % 2 == 0
        covered = [] if k else rng.choice(50, size=30, replace=False)
        rows.append(({"k": k}, covered))
    exp = build_experiment(space, rows, 50)
    model = fit_surrogate(exp, seed=0, hyper=SurrogateHyper(n_trees=20, min_samples_leaf=5))
    x_fail = encode_config(space, Configuration(values={"k": True}), model.encoding)
    x_ok = encode_config(space, Configuration(values={"k": False}), model.encoding)
    assert model.predict_matrix(x_fail[None, :])[0] < 5
    assert model.predict_matrix(x_ok[None, :])[0] > 25
