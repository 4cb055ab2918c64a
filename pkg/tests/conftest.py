from __future__ import annotations

import numpy as np
import pytest

from covtune.core import (
    Configuration,
    CoverageVector,
    Experiment,
    ParameterDef,
    ParameterSpace,
    SourceLocation,
    Trial,
)


def build_experiment(space, rows, n_branches, locations=None, source_root=None):
    """rows: list of (values dict, covered branch index iterable)."""
    trials = []
    for i, (values, covered) in enumerate(rows, start=1):
        covered = sorted(set(covered))
        trials.append(
            Trial(
                id=i,
                config=Configuration(values=values),
                coverage_value=len(covered),
                coverage=CoverageVector.from_indices(covered, n_branches),
            )
        )
    return Experiment(
        space=space,
        trials=trials,
        n_branches=n_branches,
        branch_locations=locations,
        source_root=source_root,
    )


def random_experiment(rng, n_trials, n_branches, space=None, density=0.3):
    if space is None:
        space = ParameterSpace(
            params=(
                ParameterDef(name="b", kind="binary", default=True),
                ParameterDef(name="x", kind="continuous", default=1.0, domain=(0.0, 10.0)),
                ParameterDef(name="s", kind="nominal", default="a", domain=("a", "b", "c")),
            )
        )
    rows = []
    for _ in range(n_trials):
        values = {}
        if rng.random() < 0.8:
            values["b"] = bool(rng.random() < 0.5)
        if rng.random() < 0.8:
            values["x"] = float(rng.uniform(0, 10))
        if rng.random() < 0.8:
            values["s"] = str(rng.choice(["a", "b", "c"]))
        covered = np.flatnonzero(rng.random(n_branches) < density)
        rows.append((values, covered))
    locations = {
        j: SourceLocation(file=f"src_{j % 3}.c", line=j // 3 + 1)
        for j in range(n_branches)
    }
    return build_experiment(space, rows, n_branches, locations=locations)


@pytest.fixture
def small_space():
    return ParameterSpace(
        params=(
            ParameterDef(name="S", kind="nominal", default="bfs", domain=("bfs", "dfs")),
            ParameterDef(name="MF", kind="binary", default=False),
            ParameterDef(name="T", kind="continuous", default=5.0, domain=(0.0, 100.0)),
        )
    )


@pytest.fixture
def located_experiment(small_space):
    locations = {
        0: SourceLocation(file="a.c", line=1),
        1: SourceLocation(file="a.c", line=1),
        2: SourceLocation(file="a.c", line=3),
        3: SourceLocation(file="b.c", line=2),
        4: SourceLocation(file="b.c", line=7),
    }
    rows = [
        ({"S": "bfs", "MF": True, "T": 1.0}, [0, 1]),
        ({"S": "dfs", "MF": False, "T": 2.0}, [1, 2]),
        ({"S": "bfs", "T": 50.0}, [0, 3, 4]),
        ({"S": "dfs", "MF": True}, []),
    ]
    return build_experiment(small_space, rows, 5, locations=locations)
