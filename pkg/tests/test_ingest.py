from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covtune.core import ParameterDef, ParameterSpace
from covtune.errors import BundleError, ConsistencyError, ParseError, SchemaError
from covtune.ingest import (
    ExperimentBundle,
    export_parameter_space,
    load_experiment,
    load_parameter_space,
    save_experiment,
)

from conftest import build_experiment, random_experiment


def write_bundle(tmp_path, parameters, trials_csv, branch_sets, locations, sources=None):
    root = tmp_path / "bundle"
    root.mkdir(exist_ok=True)
    (root / "parameters.json").write_text(json.dumps(parameters))
    (root / "trials.csv").write_text(trials_csv)
    (root / "branch_sets.txt").write_text(branch_sets)
    (root / "branch_locations.json").write_text(json.dumps(locations))
    src = root / "src"
    src.mkdir(exist_ok=True)
    for rel, text in (sources or {"main.c": "int main() {}\n"}).items():
        p = src / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    return ExperimentBundle.from_dir(root)


MINIMAL_PARAMS = [
    {"name": "S", "kind": "nominal", "default": "bfs", "domain": ["bfs", "dfs"]},
    {"name": "MF", "kind": "continuous", "default": 10.0, "domain": [0, 100]},
]
MINIMAL_CSV = "trial_id,coverage,S,MF\n1,2,bfs,1.0\n2,1,dfs,\n3,0,,3.5\n"
MINIMAL_SETS = "1: b0 b3\n2: b2\n3:\n"
MINIMAL_LOCS = {
    "b0": {"file": "main.c", "line": 1},
    "b1": {"file": "main.c", "line": 2},
    "b2": {"file": "main.c", "line": 3},
    "b3": {"file": "util.c", "line": 1},
    "b4": {"file": "util.c", "line": 9},
}


def minimal_bundle(tmp_path, **overrides):
    kw = dict(
        parameters=MINIMAL_PARAMS,
        trials_csv=MINIMAL_CSV,
        branch_sets=MINIMAL_SETS,
        locations=MINIMAL_LOCS,
    )
    kw.update(overrides)
    return write_bundle(tmp_path, **kw)


def test_minimal_fixture_dimensions(tmp_path):
    exp = load_experiment(minimal_bundle(tmp_path))
    assert exp.space.n_params == 2
    assert exp.n_trials == 3
    assert exp.n_branches == 5
    assert exp.trials[0].coverage_value == 2
    assert exp.trials[2].failed
    # unset cells round to None
    assert exp.trials[1].config.get("MF") is None
    assert exp.trials[2].config.get("S") is None


def test_coverage_popcount_mismatch_names_trial(tmp_path):
    bundle = minimal_bundle(
        tmp_path, trials_csv="trial_id,coverage,S,MF\n1,7,bfs,1.0\n2,1,dfs,\n3,0,,3.5\n"
    )
    with pytest.raises(ConsistencyError, match="trial 1"):
        load_experiment(bundle)


def test_unknown_parameter_column(tmp_path):
    bundle = minimal_bundle(
        tmp_path, trials_csv="trial_id,coverage,S,NOPE\n1,2,bfs,1\n2,1,dfs,\n3,0,,3\n"
    )
    with pytest.raises(SchemaError, match="NOPE"):
        load_experiment(bundle)


def test_unlocated_branches_warn_not_error(tmp_path):
    bundle = minimal_bundle(tmp_path, branch_sets="1: b0 zz\n2: b2\n3:\n")
    exp = load_experiment(bundle)
    assert exp.warnings and "zz" in exp.warnings[0]
    assert exp.n_branches == 6  # universe = locations + covered


def test_missing_file_is_parse_error(tmp_path):
    bundle = minimal_bundle(tmp_path)
    Path(bundle.trials_file).unlink()
    with pytest.raises(ParseError):
        load_experiment(bundle)


CORRUPTIONS = [
    # (name, overrides, expected error)
    ("bad kind", {"parameters": [{"name": "S", "kind": "astar", "domain": ["x"]}]}, SchemaError),
    (
        "default outside domain",
        {"parameters": [{"name": "S", "kind": "nominal", "default": "zz", "domain": ["a"]}]},
        SchemaError,
    ),
    (
        "lo > hi",
        {"parameters": [{"name": "M", "kind": "continuous", "domain": [5, 1]}]},
        SchemaError,
    ),
    (
        "duplicate names",
        {
            "parameters": [
                {"name": "S", "kind": "binary"},
                {"name": "S", "kind": "binary"},
            ]
        },
        SchemaError,
    ),
    (
        "duplicate nominal value",
        {"parameters": [{"name": "S", "kind": "nominal", "domain": ["a", "a"]}]},
        SchemaError,
    ),
    (
        "nominal empty domain",
        {"parameters": [{"name": "S", "kind": "nominal", "domain": []}]},
        SchemaError,
    ),
    (
        "not an array",
        {"parameters": {"S": {}}},
        SchemaError,
    ),
    (
        "bad boolean cell",
        {
            "parameters": [{"name": "B", "kind": "binary"}],
            "trials_csv": "trial_id,coverage,B\n1,1,yes\n",
            "branch_sets": "1: b0\n",
        },
        ParseError,
    ),
    (
        "out-of-domain nominal cell",
        {"trials_csv": "trial_id,coverage,S,MF\n1,2,astar,1.0\n2,1,dfs,\n3,0,,3.5\n"},
        ConsistencyError,
    ),
    (
        "out-of-range continuous cell",
        {"trials_csv": "trial_id,coverage,S,MF\n1,2,bfs,999\n2,1,dfs,\n3,0,,3.5\n"},
        ConsistencyError,
    ),
    (
        "non-numeric continuous cell",
        {"trials_csv": "trial_id,coverage,S,MF\n1,2,bfs,abc\n2,1,dfs,\n3,0,,3.5\n"},
        ParseError,
    ),
    (
        "non-contiguous ids",
        {
            "trials_csv": "trial_id,coverage,S,MF\n1,2,bfs,1.0\n5,1,dfs,\n3,0,,3.5\n",
        },
        ConsistencyError,
    ),
    (
        "bad header",
        {"trials_csv": "id,cov,S,MF\n1,2,bfs,1.0\n"},
        SchemaError,
    ),
    (
        "negative coverage",
        {"trials_csv": "trial_id,coverage,S,MF\n1,-1,bfs,1.0\n2,1,dfs,\n3,0,,3.5\n"},
        ConsistencyError,
    ),
    (
        "missing branch set line",
        {"branch_sets": "1: b0 b3\n2: b2\n"},
        ConsistencyError,
    ),
    (
        "extra branch set line",
        {"branch_sets": "1: b0 b3\n2: b2\n3:\n9: b1\n"},
        ConsistencyError,
    ),
    (
        "duplicate branch set line",
        {"branch_sets": "1: b0 b3\n2: b2\n3:\n3: b1\n"},
        ConsistencyError,
    ),
    (
        "malformed branch set line",
        {"branch_sets": "1 b0 b3\n2: b2\n3:\n"},
        ParseError,
    ),
    (
        "location line zero",
        {"locations": {"b0": {"file": "main.c", "line": 0}}},
        SchemaError,
    ),
    (
        "location absolute path",
        {"locations": {"b0": {"file": "/etc/passwd", "line": 3}}},
        SchemaError,
    ),
    (
        "location path traversal",
        {"locations": {"b0": {"file": "../x.c", "line": 3}}},
        SchemaError,
    ),
    (
        "location missing field",
        {"locations": {"b0": {"file": "main.c"}}},
        SchemaError,
    ),
]


@pytest.mark.parametrize("name,overrides,err", CORRUPTIONS, ids=[c[0] for c in CORRUPTIONS])
def test_single_field_corruptions_rejected_typed(tmp_path, name, overrides, err):
    bundle = minimal_bundle(tmp_path, **overrides)
    with pytest.raises(err):
        load_experiment(bundle)


def test_malformed_json_reports_file_and_line(tmp_path):
    bundle = minimal_bundle(tmp_path)
    bundle.parameters_file.write_text('[{"name": "S",]')
    with pytest.raises(ParseError) as ei:
        load_experiment(bundle)
    assert ei.value.file is not None


def _assert_experiments_equal(a, b):
    assert a.space == b.space
    assert a.n_trials == b.n_trials
    assert a.n_branches == b.n_branches
    for ta, tb in zip(a.trials, b.trials):
        assert ta.id == tb.id
        assert ta.coverage_value == tb.coverage_value
        assert ta.config.values == tb.config.values
        assert ta.coverage == tb.coverage
    assert a.branch_locations == b.branch_locations


def test_roundtrip_minimal(tmp_path):
    exp = load_experiment(minimal_bundle(tmp_path))
    out = save_experiment(exp, tmp_path / "out")
    exp2 = load_experiment(out)
    _assert_experiments_equal(exp, exp2)
    # trial order and failed zero rows preserved
    assert [t.coverage_value for t in exp2.trials] == [2, 1, 0]


def test_roundtrip_61_parameter_space(tmp_path):
    params = []
    for i in range(35):
        params.append(ParameterDef(name=f"b{i}", kind="binary", default=bool(i % 2)))
    for i in range(20):
        params.append(
            ParameterDef(name=f"c{i}", kind="continuous", default=float(i), domain=(-10.0, 1000.0))
        )
    for i in range(6):
        params.append(
            ParameterDef(name=f"n{i}", kind="nominal", default="v1", domain=("v1", "v2", "v3"))
        )
    space = ParameterSpace(params=tuple(params))
    assert space.n_params == 61
    path = tmp_path / "params.json"
    export_parameter_space(space, path)
    assert load_parameter_space(path) == space


def test_export_reflects_exclusions_and_defaults(tmp_path):
    space = ParameterSpace(
        params=(
            ParameterDef(name="ST", kind="nominal", default="simple", domain=("internal", "simple")),
            ParameterDef(name="B", kind="binary", default=True, domain=(True,)),
        )
    )
    path = tmp_path / "p.json"
    export_parameter_space(space, path)
    raw = json.loads(path.read_text())
    assert raw[0]["domain"] == ["internal", "simple"]
    assert raw[1]["domain"] == [True]
    assert raw[1]["default"] is True
    assert load_parameter_space(path) == space


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), n_trials=st.integers(1, 12), n_branches=st.integers(1, 40))
def test_roundtrip_randomized(tmp_path_factory, seed, n_trials, n_branches):
    rng = np.random.default_rng(seed)
    exp = random_experiment(rng, n_trials=n_trials, n_branches=n_branches)
    out_dir = tmp_path_factory.mktemp("rt")
    bundle = save_experiment(exp, out_dir)
    exp2 = load_experiment(bundle)
    _assert_experiments_equal(exp, exp2)
    # second round-trip is a fixed point
    bundle2 = save_experiment(exp2, out_dir / "again")
    _assert_experiments_equal(exp2, load_experiment(bundle2))


def test_gcal_scale_dimensions_accepted(tmp_path):
    # scale-shaped metadata only: a sparse experiment at the reference
    # dimensions loads with the right counts (full-scale timing lives in
    # the acceptance suite)
    n_trials, n_branches = 220, 1600
    rng = np.random.default_rng(5)
    exp = random_experiment(rng, n_trials=n_trials, n_branches=n_branches, density=0.05)
    bundle = save_experiment(exp, tmp_path / "big")
    exp2 = load_experiment(bundle)
    assert (exp2.n_trials, exp2.n_branches) == (n_trials, n_branches)
