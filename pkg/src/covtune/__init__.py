"""Parameter-tuning workbench for coverage-driven test-generation engines."""

from .core import (
    Configuration,
    CoverageVector,
    Experiment,
    ParameterDef,
    ParameterSpace,
    SourceLocation,
    Trial,
    TrialGroup,
    accum,
    branch_frequency,
    complementarity,
    group_vector,
    jaccard_distance,
)

__all__ = [
    "Configuration",
    "CoverageVector",
    "Experiment",
    "ParameterDef",
    "ParameterSpace",
    "SourceLocation",
    "Trial",
    "TrialGroup",
    "accum",
    "branch_frequency",
    "complementarity",
    "group_vector",
    "jaccard_distance",
]

__version__ = "0.1.0"
