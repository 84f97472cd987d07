"""Simulation and estimation of many-to-one two-sided matching markets
without transfers: deferred acceptance, cutoffs and stability audits,
a Gibbs sampler with data augmentation, an average-derivative estimator,
priority-policy counterfactuals and model-fit diagnostics."""

__version__ = "0.1.0"

from .errors import (ConfigError, DataError, EstimationError, InvalidBounds, InvalidInput,
                     MatchingError, RankDeficiencyError, SchemaError, StateCorruption)
from .market import (NEG_INF, LatentUtilities, Market, Matching, SchoolType, audit_stability,
                     compute_cutoffs, deferred_acceptance, feasible_set, stable_from_cutoffs)
from .truncnorm import rtruncnorm, sample_truncated_normal
from .model import EmpiricalSpec, IndexModel, Term, build_utilities, compile_spec
from .dgp import DgpConfig, simulate_market

__all__ = [
    "ConfigError", "DataError", "EstimationError", "InvalidBounds", "InvalidInput", "MatchingError",
    "RankDeficiencyError", "SchemaError", "StateCorruption", "NEG_INF", "LatentUtilities", "Market",
    "Matching", "SchoolType", "audit_stability", "compute_cutoffs", "deferred_acceptance",
    "feasible_set", "stable_from_cutoffs", "rtruncnorm", "sample_truncated_normal", "EmpiricalSpec",
    "IndexModel", "Term", "build_utilities", "compile_spec", "DgpConfig", "simulate_market",
]
