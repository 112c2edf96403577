"""Stable matching in large school-choice markets.

Continuum solver, closed-form market-size formulas, and a finite-market
simulation engine for checking the two against each other.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import BigmatchError, ConfigError, ConvergenceError, InfeasibleError
from .vacancy import (
    DETERMINISTIC,
    POISSON,
    VacancyFunction,
    VacancyKind,
    acceptance_rate,
    enrollment,
    lambda_for_enrollment,
    vacancy,
)
from .measures import (
    AdmissionSummary,
    CommonPlusIdiosyncratic,
    CommonValue,
    DiscreteClasses,
    ExactCount,
    FiniteMarket,
    IndependentUniform,
    LengthDistribution,
    Market,
    PoissonCount,
    SingleLottery,
    Student,
    StudentClass,
    SymmetricIID,
    SymmetricRSD,
    build_market,
    conditional_admission_prob,
    sample_finite_market,
)
from . import config, formulas, markets
from .finite import (
    AggregateStat,
    Assignment,
    MonteCarloResult,
    TrialStatistics,
    blocking_pairs,
    da_school_proposing,
    da_student_proposing,
    enumerate_stable,
    extract_cutoffs,
    is_discrete_fixed_point,
    is_stable,
    monte_carlo,
)
from .solver import (
    AdmissionsFunction,
    FractionalMatching,
    InterestFunction,
    PriorityGrid,
    StableOutcome,
    admissions_from_interest,
    average_rank,
    cutoff_mean,
    cutoff_quantiles,
    cutoffs_from_interest,
    demand_at_cutoffs,
    interest_from_matching,
    is_market_clearing,
    iterate_map,
    load_outcome,
    matched_mass,
    matching_distance,
    matching_from_admissions,
    outcome_document,
    save_outcome,
    solve_stable,
)

__all__ = [
    "__version__",
    # submodules re-exported whole
    "config",
    "formulas",
    "markets",
    # errors
    "BigmatchError",
    "ConfigError",
    "ConvergenceError",
    "InfeasibleError",
    # vacancy
    "VacancyKind",
    "VacancyFunction",
    "DETERMINISTIC",
    "POISSON",
    "vacancy",
    "enrollment",
    "acceptance_rate",
    "lambda_for_enrollment",
    # measures
    "LengthDistribution",
    "IndependentUniform",
    "SingleLottery",
    "CommonPlusIdiosyncratic",
    "StudentClass",
    "SymmetricIID",
    "SymmetricRSD",
    "CommonValue",
    "DiscreteClasses",
    "Market",
    "build_market",
    "ExactCount",
    "PoissonCount",
    "Student",
    "FiniteMarket",
    "sample_finite_market",
    "AdmissionSummary",
    "conditional_admission_prob",
    # finite
    "Assignment",
    "da_student_proposing",
    "da_school_proposing",
    "blocking_pairs",
    "is_stable",
    "enumerate_stable",
    "extract_cutoffs",
    "is_discrete_fixed_point",
    "TrialStatistics",
    "AggregateStat",
    "MonteCarloResult",
    "monte_carlo",
    # solver
    "PriorityGrid",
    "InterestFunction",
    "AdmissionsFunction",
    "FractionalMatching",
    "StableOutcome",
    "interest_from_matching",
    "admissions_from_interest",
    "matching_from_admissions",
    "iterate_map",
    "solve_stable",
    "cutoffs_from_interest",
    "demand_at_cutoffs",
    "is_market_clearing",
    "cutoff_quantiles",
    "cutoff_mean",
    "matched_mass",
    "average_rank",
    "matching_distance",
    "outcome_document",
    "save_outcome",
    "load_outcome",
]
