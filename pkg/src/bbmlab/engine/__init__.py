"""Monte Carlo engine: branching trees, path kernels, count sampling."""

from .backend import backend_name
from .core import (
    BudgetExceededError,
    STREAM_CONFINEMENT,
    STREAM_COUNT_LAW,
    STREAM_LLN,
    STREAM_MASS,
    STREAM_MRCA,
    STREAM_NAIVE,
    STREAM_PROBE,
    STREAM_SIM,
    STREAM_STRATUM_EARLY,
    STREAM_STRATUM_QUIET,
    MRCASplitProbe,
    ParticleRecord,
    SimulationResult,
    Snapshot,
    active_count,
    generator,
    mrca_split_probe,
    sample_counts,
    simulate,
)
from .singlepath import confinement_probability_mc, displacement_tail_probe
from .skeleton import NONE, Skeleton, StrategyCondition, build_plan, build_skeleton

__all__ = [
    "backend_name",
    "BudgetExceededError",
    "Snapshot",
    "ParticleRecord",
    "SimulationResult",
    "MRCASplitProbe",
    "simulate",
    "active_count",
    "sample_counts",
    "mrca_split_probe",
    "generator",
    "confinement_probability_mc",
    "displacement_tail_probe",
    "StrategyCondition",
    "Skeleton",
    "NONE",
    "build_skeleton",
    "build_plan",
    "STREAM_SIM",
    "STREAM_CONFINEMENT",
    "STREAM_NAIVE",
    "STREAM_STRATUM_QUIET",
    "STREAM_STRATUM_EARLY",
    "STREAM_PROBE",
    "STREAM_MRCA",
    "STREAM_MASS",
    "STREAM_LLN",
    "STREAM_COUNT_LAW",
]
