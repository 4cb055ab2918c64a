from __future__ import annotations

from itertools import combinations
from math import factorial

import numpy as np
import pytest

from covtune.core import Configuration, ParameterDef, ParameterSpace
from covtune.effects.gbdt import (
    SurrogateHyper,
    SurrogateModel,
    TreeArrays,
    build_encoding,
    encode_config,
    encode_experiment,
    fit_surrogate,
)
from covtune.effects.shap import shap_matrix, shap_matrix_features, shapley_attribution
from covtune.errors import UnknownParameterError

from conftest import build_experiment


# --- brute-force oracle ------------------------------------------------------

def pred_coalition(tree: TreeArrays, x, coalition, node=0):
    """Expected tree output with only `coalition` features fixed to x;
    absent features marginalize along training covers."""
    if tree.children_left[node] < 0:
        return tree.value[node]
    f = tree.feature[node]
    left, right = tree.children_left[node], tree.children_right[node]
    if f in coalition:
        nxt = left if x[f] <= tree.threshold[node] else right
        return pred_coalition(tree, x, coalition, nxt)
    wl = tree.cover[left] / tree.cover[node]
    wr = tree.cover[right] / tree.cover[node]
    return wl * pred_coalition(tree, x, coalition, left) + wr * pred_coalition(
        tree, x, coalition, right
    )


def brute_force_shap(model: SurrogateModel, x, n_features) -> np.ndarray:
    phi = np.zeros(n_features)
    m = n_features
    for f in range(n_features):
        others = [g for g in range(m) if g != f]
        for r in range(m):
            for combo in combinations(others, r):
                s = frozenset(combo)
                weight = factorial(len(s)) * factorial(m - len(s) - 1) / factorial(m)
                for tree in model.trees:
                    gain = pred_coalition(tree, x, s | {f}) - pred_coalition(tree, x, s)
                    phi[f] += model.learning_rate * weight * gain
    return phi


def make_model(space, trees, lr=1.0, f0=0.0):
    enc = build_encoding(space)
    base = f0 + lr * sum(t.expected_value() for t in trees)
    return SurrogateModel(
        space=space,
        encoding=enc,
        trees=trees,
        f0=f0,
        learning_rate=lr,
        base_value=base,
        hyper=SurrogateHyper(),
        seed=0,
        max_depth=6,
    )


def stump(feature, threshold, left_value, right_value, left_cover, right_cover):
    return TreeArrays(
        children_left=np.array([1, -1, -1]),
        children_right=np.array([2, -1, -1]),
        feature=np.array([feature, -1, -1]),
        threshold=np.array([threshold, 0.0, 0.0]),
        value=np.array([0.0, left_value, right_value]),
        cover=np.array([left_cover + right_cover, left_cover, right_cover], dtype=float),
    )


# --- trivial cases -----------------------------------------------------------

def test_constant_model_all_attributions_zero(small_space):
    rows = [({}, range(7))] * 35
    exp = build_experiment(small_space, rows, 10)
    with pytest.warns(UserWarning):
        model = fit_surrogate(exp)
    attr = shapley_attribution(model, Configuration(values={"S": "dfs"}))
    assert set(attr) == {"S", "MF", "T"}
    assert all(v == 0.0 for v in attr.values())


def test_stump_two_player_attribution():
    space = ParameterSpace(params=(ParameterDef(name="p", kind="binary", default=False),))
    # p's main feature is feature 0; equal 50/50 training mass
    tree = stump(feature=0, threshold=0.5, left_value=10.0, right_value=20.0,
                 left_cover=50, right_cover=50)
    model = make_model(space, [tree])
    assert model.base_value == 15.0
    attr = shapley_attribution(model, Configuration(values={"p": True}))
    assert attr["p"] == pytest.approx(5.0, abs=1e-12)
    attr = shapley_attribution(model, Configuration(values={"p": False}))
    assert attr["p"] == pytest.approx(-5.0, abs=1e-12)


def test_unknown_parameter_rejected(small_space):
    rows = [({}, [0, 1]), ({}, [2])] * 20
    exp = build_experiment(small_space, rows, 5)
    model = fit_surrogate(exp, hyper=SurrogateHyper(n_trees=3))
    with pytest.raises(UnknownParameterError):
        shapley_attribution(model, Configuration(values={"nope": 1.0}))


# --- exactness against the coalition-enumeration oracle ----------------------

def random_tree(rng, n_features, depth, cover_total=64):
    """Random full-ish binary tree over [0,1] features with random covers."""
    nodes = {"cl": [], "cr": [], "f": [], "t": [], "v": [], "c": []}

    def add(depth_left, cover):
        idx = len(nodes["cl"])
        for key in nodes:
            nodes[key].append(0)
        if depth_left == 0 or cover < 2 or rng.random() < 0.25:
            nodes["cl"][idx] = -1
            nodes["cr"][idx] = -1
            nodes["f"][idx] = -1
            nodes["v"][idx] = float(rng.normal(0, 5))
            nodes["c"][idx] = cover
            return idx
        lc = int(rng.integers(1, cover))
        nodes["f"][idx] = int(rng.integers(0, n_features))
        nodes["t"][idx] = float(rng.uniform(0.1, 0.9))
        nodes["c"][idx] = cover
        nodes["cl"][idx] = add(depth_left - 1, lc)
        nodes["cr"][idx] = add(depth_left - 1, cover - lc)
        return idx

    add(depth, cover_total)
    leaves = [i for i, c in enumerate(nodes["cl"]) if c == -1]
    # cover-weighted mean as value for internal nodes is irrelevant to shap
    return TreeArrays(
        children_left=np.array(nodes["cl"]),
        children_right=np.array(nodes["cr"]),
        feature=np.array(nodes["f"]),
        threshold=np.array(nodes["t"]),
        value=np.array(nodes["v"]),
        cover=np.array(nodes["c"], dtype=float),
    )


def test_feature_level_exactness_random_ensembles():
    rng = np.random.default_rng(0)
    space = ParameterSpace(
        params=tuple(
            ParameterDef(name=f"p{i}", kind="continuous", default=0.5, domain=(0.0, 1.0))
            for i in range(3)
        )
    )
    enc = build_encoding(space)
    n_features = enc.n_features  # 6: three mains + three indicators
    for trial in range(12):
        trees = [
            random_tree(rng, n_features, depth=int(rng.integers(1, 5)))
            for _ in range(int(rng.integers(1, 4)))
        ]
        model = make_model(space, trees, lr=0.37, f0=1.5)
        x = rng.uniform(0, 1, n_features)
        expected = brute_force_shap(model, x, n_features)
        got = shap_matrix_features(model, x[None, :])[0]
        np.testing.assert_allclose(got, expected, atol=1e-9)
        # additivity against the oracle's full-coalition prediction
        full = model.f0 + sum(
            model.learning_rate * pred_coalition(t, x, frozenset(range(n_features)))
            for t in model.trees
        )
        assert model.base_value + got.sum() == pytest.approx(full, abs=1e-9)


def test_parameter_level_exactness_four_param_ensembles():
    # one live feature per parameter, so parameter-coalition Shapley is
    # exactly the feature-level value summed with its constant indicator
    rng = np.random.default_rng(1)
    space = ParameterSpace(
        params=tuple(
            ParameterDef(name=f"p{i}", kind="continuous", default=0.5, domain=(0.0, 1.0))
            for i in range(4)
        )
    )
    rows = []
    for _ in range(64):
        values = {f"p{i}": float(rng.uniform(0, 1)) for i in range(4)}
        y = (
            40 * values["p0"]
            + 25 * (values["p1"] > 0.5)
            + 10 * values["p2"] * values["p3"]
        )
        covered = rng.choice(300, size=int(y) + 5, replace=False)
        rows.append((values, covered))
    exp = build_experiment(space, rows, 300)
    model = fit_surrogate(exp, seed=0, hyper=SurrogateHyper(n_trees=3, min_samples_leaf=4))
    enc = model.encoding
    X = encode_experiment(exp, enc)
    main_features = [i for i, name in enumerate(enc.feature_names) if "?" not in name]
    assert len(main_features) == 4

    for row in (0, 17, 43):
        x = X[row]
        # brute force over 2^4 parameter coalitions (main features move
        # as the parameter; indicators are constant -> dummies)
        phi = np.zeros(4)
        for pi, f in enumerate(main_features):
            others = [g for g in main_features if g != f]
            for r in range(4):
                for combo in combinations(others, r):
                    s = frozenset(combo)
                    weight = factorial(len(s)) * factorial(4 - len(s) - 1) / factorial(4)
                    for tree in model.trees:
                        gain = pred_coalition(tree, x, s | {f}) - pred_coalition(tree, x, s)
                        phi[pi] += model.learning_rate * weight * gain
        got = shap_matrix(model, x[None, :])[0]
        np.testing.assert_allclose(got, phi, atol=1e-9)


def test_additivity_every_trial_of_a_fitted_model():
    rng = np.random.default_rng(5)
    space = ParameterSpace(
        params=(
            ParameterDef(name="a", kind="continuous", default=0.0, domain=(0.0, 1.0)),
            ParameterDef(name="s", kind="nominal", default="x", domain=("x", "y", "z")),
            ParameterDef(name="b", kind="binary", default=False),
        )
    )
    rows = []
    for _ in range(150):
        values = {}
        if rng.random() < 0.85:
            values["a"] = float(rng.uniform(0, 1))
        if rng.random() < 0.85:
            values["s"] = str(rng.choice(["x", "y", "z"]))
        if rng.random() < 0.85:
            values["b"] = bool(rng.random() < 0.5)
        y = int(
            20
            + 30 * values.get("a", 0.3)
            + 15 * (values.get("s") == "y")
            + 8 * values.get("b", False)
            + rng.normal(0, 2)
        )
        rows.append((values, rng.choice(200, size=max(0, min(y, 200)), replace=False)))
    exp = build_experiment(space, rows, 200)
    model = fit_surrogate(exp, seed=0)
    X = encode_experiment(exp, model.encoding)
    phi = shap_matrix(model, X)
    pred = model.predict_matrix(X)
    recon = model.base_value + phi.sum(axis=1)
    np.testing.assert_allclose(recon, pred, rtol=1e-6, atol=1e-9)


def test_ranking_invariant_under_affine_target_rescale_stump_models():
    # an affine target transform a*y+b maps a stump ensemble to one with
    # leaf values a*v and intercept a*f0+b; attributions scale by exactly
    # a, so the |effect| ordering cannot change
    space = ParameterSpace(
        params=tuple(
            ParameterDef(name=f"p{i}", kind="binary", default=False) for i in range(3)
        )
    )
    enc = build_encoding(space)
    mains = [i for i, n in enumerate(enc.feature_names) if "?" not in n]
    trees = [
        stump(mains[0], 0.5, 10.0, 34.0, 40, 60),
        stump(mains[1], 0.5, 18.0, 12.0, 50, 50),
        stump(mains[2], 0.5, 15.0, 15.5, 70, 30),
    ]
    a, b = 3.5, -40.0
    scaled = [
        TreeArrays(
            children_left=t.children_left,
            children_right=t.children_right,
            feature=t.feature,
            threshold=t.threshold,
            value=a * t.value,
            cover=t.cover,
        )
        for t in trees
    ]
    m1 = make_model(space, trees, lr=1.0, f0=5.0)
    m2 = make_model(space, scaled, lr=1.0, f0=a * 5.0 + b)
    for values in ({}, {"p0": True}, {"p0": True, "p1": False, "p2": True}):
        phi1 = shapley_attribution(m1, Configuration(values=values))
        phi2 = shapley_attribution(m2, Configuration(values=values))
        for name in phi1:
            assert phi2[name] == pytest.approx(a * phi1[name], abs=1e-9)
        order1 = sorted(phi1, key=lambda n: -abs(phi1[n]))
        order2 = sorted(phi2, key=lambda n: -abs(phi2[n]))
        assert order1 == order2


def test_refit_on_rescaled_target_keeps_tree_structure_and_scales_attributions():
    # the mechanism behind refit ranking invariance: split gains scale by
    # a^2 so the same splits win, and leaf values (hence attributions)
    # scale by a
    rng = np.random.default_rng(9)
    space = ParameterSpace(
        params=(
            ParameterDef(name="big", kind="binary", default=False),
            ParameterDef(name="mid", kind="binary", default=False),
        )
    )
    rows, rows2 = [], []
    for _ in range(200):
        big = bool(rng.random() < 0.5)
        mid = bool(rng.random() < 0.5)
        y = int(30 + 40 * big + 12 * mid + rng.normal(0, 1))
        values = {"big": big, "mid": mid}
        rows.append((values, rng.choice(400, size=y, replace=False)))
        scaled = []
        for j in rows[-1][1]:
            scaled.extend((3 * j, 3 * j + 1, 3 * j + 2))  # y' = 3*y + 7
        scaled.extend(range(1200, 1207))
        rows2.append((values, scaled))
    exp = build_experiment(space, rows, 400)
    exp2 = build_experiment(space, rows2, 1207)
    hyper = SurrogateHyper(n_trees=15, max_depth=2)
    m1 = fit_surrogate(exp, seed=0, hyper=hyper)
    m2 = fit_surrogate(exp2, seed=0, hyper=hyper)
    for t1, t2 in zip(m1.trees, m2.trees):
        assert np.array_equal(t1.feature, t2.feature)
        np.testing.assert_allclose(t2.value, 3.0 * t1.value, rtol=1e-9, atol=1e-9)
    X = encode_experiment(exp, m1.encoding)
    phi1 = shap_matrix(m1, X)
    phi2 = shap_matrix(m2, X)
    np.testing.assert_allclose(phi2, 3.0 * phi1, rtol=1e-7, atol=1e-9)
