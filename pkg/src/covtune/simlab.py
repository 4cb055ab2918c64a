"""Desk-scale stand-in for the engine + tuner loop.

A synthetic program is a forest of branch chains with nesting semantics:
branch k+1 of a chain is reachable only if branch k was covered. Each
branch has a base reach probability, multiplied by per-(parameter,
value-bucket) modifiers of the active configuration; configurations
hitting a planted failure value cover nothing. A small
exponentially-weighted epsilon-greedy tuner refines per-parameter
sampling distributions from coverage rewards, so full
analyze-refine-rerun cycles are runnable without a real engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Configuration,
    CoverageVector,
    Experiment,
    ParamValue,
    ParameterDef,
    ParameterSpace,
    SourceLocation,
    Trial,
)
from .errors import InvalidConfigError, UnknownProfileError

N_TUNER_BINS = 8  # continuous domains discretize into this many sampling bins


@dataclass(frozen=True)
class SamplingBucket:
    """One sampling choice of a parameter: a value or a continuous sub-range."""

    param: str
    label: str
    value: ParamValue = None
    lo: float | None = None
    hi: float | None = None

    def matches(self, v: ParamValue) -> bool:
        if v is None:
            return False
        if self.lo is not None:
            return self.lo <= float(v) <= self.hi
        return v == self.value

    def draw(self, rng: np.random.Generator) -> ParamValue:
        if self.lo is not None:
            return float(rng.uniform(self.lo, self.hi))
        return self.value


def sampling_buckets(pdef: ParameterDef) -> list[SamplingBucket]:
    if pdef.kind == "binary":
        return [
            SamplingBucket(param=pdef.name, label="true" if v else "false", value=v)
            for v in pdef.domain
        ]
    if pdef.kind == "nominal":
        return [SamplingBucket(param=pdef.name, label=v, value=v) for v in pdef.domain]
    lo, hi = pdef.domain
    if lo == hi:
        return [SamplingBucket(param=pdef.name, label=f"[{lo:g}, {hi:g}]", lo=lo, hi=hi)]
    edges = np.linspace(lo, hi, N_TUNER_BINS + 1)
    return [
        SamplingBucket(
            param=pdef.name,
            label=f"[{a:g}, {b:g}]",
            lo=float(a),
            hi=float(b),
        )
        for a, b in zip(edges[:-1], edges[1:])
    ]


@dataclass
class TunerState:
    """Per-parameter categorical sampling over value buckets.

    Greedy choice follows the exponentially-weighted mean reward of each
    bucket, mixed with uniform exploration at rate epsilon. Before a
    parameter has any observations its greedy bucket is the one holding
    the space default.
    """

    space: ParameterSpace
    epsilon: float = 0.1
    ew_rate: float = 0.2
    buckets: dict[str, list[SamplingBucket]] = field(default_factory=dict)
    means: dict[str, np.ndarray] = field(default_factory=dict)
    counts: dict[str, np.ndarray] = field(default_factory=dict)
    reward_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidConfigError("epsilon must be in [0, 1]")
        for p in self.space.params:
            bs = sampling_buckets(p)
            self.buckets[p.name] = bs
            self.means[p.name] = np.zeros(len(bs))
            self.counts[p.name] = np.zeros(len(bs), dtype=np.int64)

    def _greedy_index(self, name: str) -> int:
        counts = self.counts[name]
        if counts.sum() == 0:
            pdef = self.space[name]
            if pdef.default is not None:
                for i, b in enumerate(self.buckets[name]):
                    if b.matches(pdef.default):
                        return i
            return 0
        return int(np.argmax(self.means[name]))

    def distribution(self, name: str) -> np.ndarray:
        """Current sampling probabilities over the parameter's buckets."""
        bs = self.buckets[name]
        probs = np.full(len(bs), self.epsilon / len(bs))
        probs[self._greedy_index(name)] += 1.0 - self.epsilon
        return probs

    def sample(self, rng: np.random.Generator) -> Configuration:
        values = {}
        for p in self.space.params:
            probs = self.distribution(p.name)
            i = int(rng.choice(len(probs), p=probs))
            values[p.name] = self.buckets[p.name][i].draw(rng)
        return Configuration(values=values)

    def update(self, config: Configuration, reward: float) -> None:
        self.reward_history.append(reward)
        for p in self.space.params:
            v = config.get(p.name)
            if v is None:
                continue
            for i, b in enumerate(self.buckets[p.name]):
                if b.matches(v):
                    c = self.counts[p.name][i]
                    if c == 0:
                        self.means[p.name][i] = reward
                    else:
                        self.means[p.name][i] = (
                            (1 - self.ew_rate) * self.means[p.name][i]
                            + self.ew_rate * reward
                        )
                    self.counts[p.name][i] = c + 1
                    break


@dataclass(frozen=True)
class Chain:
    """One nesting chain; branch ids are dense, position = depth."""

    file: str
    branch_ids: tuple[int, ...]
    base_probs: tuple[float, ...]


@dataclass(frozen=True)
class SyntheticProgram:
    space: ParameterSpace
    chains: tuple[Chain, ...]
    # (param, bucket label) -> multiplicative reach modifier applied to
    # chains tagged with the group key
    modifiers: dict[tuple[str, str], dict[str, float]]
    chain_tags: dict[str, str]  # file -> group key
    failure_values: frozenset[tuple[str, ParamValue]]
    engine_defaults: dict[str, ParamValue]
    ground_truth: dict = field(default_factory=dict)

    @property
    def n_branches(self) -> int:
        return sum(len(c.branch_ids) for c in self.chains)

    def branch_locations(self) -> dict[int, SourceLocation]:
        out = {}
        for chain in self.chains:
            for depth, b in enumerate(chain.branch_ids):
                out[b] = SourceLocation(file=chain.file, line=2 * depth + 2)
        return out

    def sources(self) -> dict[str, str]:
        files: dict[str, list[str]] = {}
        for chain in self.chains:
            lines = files.setdefault(chain.file, ["// synthetic target"])
            for depth in range(len(chain.branch_ids)):
                lines.append("  " * depth + f"if (cond_{depth}()) {{")
            for depth in reversed(range(len(chain.branch_ids))):
                lines.append("  " * depth + "}")
        return {f: "\n".join(ls) + "\n" for f, ls in files.items()}

    def _bucket_label(self, pdef: ParameterDef, v: ParamValue) -> str | None:
        for b in sampling_buckets(pdef):
            if b.matches(v):
                return b.label
        return None

    def reach_multiplier(self, config: Configuration, file: str) -> float:
        tag = self.chain_tags.get(file, "")
        mult = 1.0
        for pdef in self.space.params:
            v = config.get(pdef.name)
            if v is None:
                v = self.engine_defaults.get(pdef.name)
            if v is None:
                continue
            label = self._bucket_label(pdef, v)
            if label is None:
                continue
            mods = self.modifiers.get((pdef.name, label))
            if mods and tag in mods:
                mult *= mods[tag]
        return mult


def run_engine(prog: SyntheticProgram, config: Configuration, seed: int) -> Trial:
    """One synthetic engine run; deterministic for a fixed seed.

    Draw order is documented: chains in definition order, one uniform
    draw per visited branch, stopping a chain at its first miss.
    """
    config.validate(prog.space)
    rng = np.random.default_rng(seed)
    n_bits = prog.n_branches
    for param, value in prog.failure_values:
        v = config.get(param)
        if v is None:
            v = prog.engine_defaults.get(param)
        if v == value:
            vec = CoverageVector.zeros(n_bits)
            return Trial(id=1, config=config, coverage_value=0, coverage=vec)
    covered = []
    for chain in prog.chains:
        mult = prog.reach_multiplier(config, chain.file)
        for b, base in zip(chain.branch_ids, chain.base_probs):
            p = min(1.0, max(0.0, base * mult))
            if rng.random() < p:
                covered.append(b)
            else:
                break
    vec = CoverageVector.from_indices(covered, n_bits)
    return Trial(id=1, config=config, coverage_value=len(covered), coverage=vec)


def run_experiment(
    prog: SyntheticProgram,
    space: ParameterSpace,
    tuner: TunerState,
    n_trials: int,
    seed: int,
) -> Experiment:
    """sample -> run engine -> reward-update loop producing an Experiment."""
    if n_trials < 1:
        raise InvalidConfigError("n_trials must be >= 1")
    root = np.random.default_rng(seed)
    trials = []
    for i in range(1, n_trials + 1):
        config = tuner.sample(root)
        engine_seed = int(root.integers(0, 2**63 - 1))
        t = run_engine(prog, config, engine_seed)
        tuner.update(config, float(t.coverage_value))
        trials.append(
            Trial(id=i, config=config, coverage_value=t.coverage_value, coverage=t.coverage)
        )
    return Experiment(
        space=space,
        trials=trials,
        n_branches=prog.n_branches,
        branch_locations=prog.branch_locations(),
        source_root=None,
        branch_ids=[str(j) for j in range(prog.n_branches)],
        sources=prog.sources(),
    )


def _chain_block(start: int, file: str, lengths: list[int], probs) -> tuple[list[Chain], int]:
    chains = []
    b = start
    for i, length in enumerate(lengths):
        ids = tuple(range(b, b + length))
        base = tuple(probs(i, d) for d in range(length))
        chains.append(Chain(file=file.format(i=i), branch_ids=ids, base_probs=base))
        b += length
    return chains, b


def make_benchmark_program(profile: str, seed: int = 0) -> SyntheticProgram:
    """Named fixture programs with documented ground truth.

    nested-depth   one strategy value boosts deep branches, another wide
                   ones, so the two strategies are complementary
    failure-prone  a planted switch-implementation value forces zero
                   coverage
    null-params    two causal parameters with planted effects, five inert
    composite      all three traits combined (the HITL loop fixture)
    """
    if profile == "nested-depth":
        return _nested_depth()
    if profile == "failure-prone":
        return _failure_prone()
    if profile == "null-params":
        return _null_params()
    if profile == "composite":
        return _composite()
    raise UnknownProfileError(f"unknown profile {profile!r}")


def _entry_chain() -> list[Chain]:
    # Branch 0 is always covered (the program entry), so only planted
    # failure values can produce a zero-coverage trial.
    return [Chain(file="main.c", branch_ids=(0,), base_probs=(1.0,))]


def _strategy_param() -> ParameterDef:
    return ParameterDef(
        name="S",
        kind="nominal",
        label="search strategy",
        default="balanced",
        domain=("deep", "wide", "balanced"),
        description="how the engine traverses branches",
    )


def _nested_depth_parts(next_id: int):
    deep_chains, next_id = _chain_block(
        next_id,
        "deep/nest_{i}.c",
        [12] * 6,
        lambda i, d: 0.97 if d < 4 else 0.42,
    )
    wide_chains, next_id = _chain_block(
        next_id, "wide/flat_{i}.c", [2] * 60, lambda i, d: 0.30
    )
    modifiers = {
        ("S", "deep"): {"deep": 1.0 / 0.42 * 0.93, "wide": 1.0},
        ("S", "wide"): {"deep": 1.0, "wide": 3.0},
        ("S", "balanced"): {"deep": 1.45, "wide": 2.0},
    }
    tags = {c.file: "deep" for c in deep_chains}
    tags.update({c.file: "wide" for c in wide_chains})
    return deep_chains + wide_chains, next_id, modifiers, tags


def _nested_depth() -> SyntheticProgram:
    chains = _entry_chain()
    body, next_id, modifiers, tags = _nested_depth_parts(1)
    chains += body
    space = ParameterSpace(params=(_strategy_param(),))
    return SyntheticProgram(
        space=space,
        chains=tuple(chains),
        modifiers=modifiers,
        chain_tags=tags,
        failure_values=frozenset(),
        engine_defaults={"S": "balanced"},
        ground_truth={
            "complementary_buckets": ("S=deep", "S=wide"),
            "deep_files": sorted({c.file for c in body if "deep/" in c.file}),
            "wide_files": sorted({c.file for c in body if "wide/" in c.file}),
        },
    )


def _switch_param() -> ParameterDef:
    return ParameterDef(
        name="ST",
        kind="nominal",
        label="switch implementation",
        default="internal",
        domain=("internal", "simple", "llvm"),
        description="how switch statements lower to branches",
    )


def _failure_prone() -> SyntheticProgram:
    chains = _entry_chain()
    body, next_id = _chain_block(1, "core/logic_{i}.c", [4] * 30, lambda i, d: 0.75)
    chains += body
    space = ParameterSpace(
        params=(
            _switch_param(),
            ParameterDef(
                name="UIS",
                kind="binary",
                label="use independent solving",
                default=True,
                description="split queries into independent parts",
            ),
        )
    )
    return SyntheticProgram(
        space=space,
        chains=tuple(chains),
        modifiers={("UIS", "true"): {"": 1.15}},
        chain_tags={c.file: "" for c in chains},
        failure_values=frozenset({("ST", "llvm")}),
        engine_defaults={"ST": "internal", "UIS": True},
        ground_truth={"failure_values": [("ST", "llvm")]},
    )


_INERT_PARAMS = (
    ParameterDef(name="KCO", kind="binary", label="keep call outputs", default=False),
    ParameterDef(name="DI", kind="binary", label="debug instrumentation", default=False),
    ParameterDef(name="DV", kind="binary", label="debug validation", default=True),
    ParameterDef(
        name="SDC",
        kind="nominal",
        label="constant encoding",
        default="dec",
        domain=("dec", "hex", "bin"),
    ),
    ParameterDef(
        name="BT",
        kind="continuous",
        label="batching time",
        default=5.0,
        domain=(0.0, 100.0),
    ),
)


def _null_params() -> SyntheticProgram:
    chains = _entry_chain()
    base, next_id = _chain_block(1, "base/core_{i}.c", [3] * 40, lambda i, d: 0.85)
    s_block, next_id = _chain_block(next_id, "sblock/fast_{i}.c", [4] * 20, lambda i, d: 0.20)
    mf_block, next_id = _chain_block(next_id, "mfblock/fork_{i}.c", [3] * 16, lambda i, d: 0.22)
    chains += base + s_block + mf_block
    space = ParameterSpace(
        params=(
            ParameterDef(
                name="S",
                kind="nominal",
                label="search strategy",
                default="slow",
                domain=("fast", "slow"),
            ),
            ParameterDef(
                name="MF", kind="binary", label="max-forks boost", default=False
            ),
            *_INERT_PARAMS,
        )
    )
    tags = {c.file: "base" for c in base}
    tags.update({c.file: "sblock" for c in s_block})
    tags.update({c.file: "mfblock" for c in mf_block})
    tags["main.c"] = "base"
    modifiers = {
        ("S", "fast"): {"sblock": 4.5},
        ("MF", "true"): {"mfblock": 4.0},
    }
    return SyntheticProgram(
        space=space,
        chains=tuple(chains),
        modifiers=modifiers,
        chain_tags=tags,
        failure_values=frozenset(),
        engine_defaults={p.name: p.default for p in space.params},
        ground_truth={
            "causal_params": ["S", "MF"],
            "inert_params": [p.name for p in _INERT_PARAMS],
        },
    )


def _composite() -> SyntheticProgram:
    chains = _entry_chain()
    body, next_id, modifiers, tags = _nested_depth_parts(1)
    mf_block, next_id = _chain_block(next_id, "mfblock/fork_{i}.c", [3] * 16, lambda i, d: 0.22)
    chains += body + mf_block
    tags.update({c.file: "mfblock" for c in mf_block})
    tags["main.c"] = "base"
    modifiers = dict(modifiers)
    modifiers[("MF", "true")] = {"mfblock": 4.0}
    space = ParameterSpace(
        params=(
            _strategy_param(),
            ParameterDef(name="MF", kind="binary", label="max-forks boost", default=False),
            _switch_param(),
            *_INERT_PARAMS,
        )
    )
    return SyntheticProgram(
        space=space,
        chains=tuple(chains),
        modifiers=modifiers,
        chain_tags=tags,
        failure_values=frozenset({("ST", "llvm")}),
        engine_defaults={p.name: p.default for p in space.params},
        ground_truth={
            "causal_params": ["S", "MF"],
            "inert_params": [p.name for p in _INERT_PARAMS],
            "failure_values": [("ST", "llvm")],
            "complementary_buckets": ("S=deep", "S=wide"),
        },
    )
