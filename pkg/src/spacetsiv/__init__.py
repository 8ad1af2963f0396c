"""Sparse causal effect estimation from two-sample summary statistics."""

from .errors import (
    InputError,
    NumericalError,
    ParseError,
    SpaceTsivError,
)
from .estimators import (
    ConfidenceInterval,
    SpaceTsivResult,
    ci_by_inversion,
    default_lambda_path,
    lambda_max,
    spacetsiv_l0,
    spacetsiv_l1,
    tsiv,
    tsiv_l1_solve,
)
from .identifiability import IdentifiabilityReport, check_assumption_a, check_assumption_c, diagnose
from .qstat import (
    FitResult,
    SupportSet,
    ar_statistic,
    chi2_cdf,
    chi2_quantile,
    fit_restricted,
    level_test,
    q_statistic,
)
from .simulate import DgpSpec, dgp1_spec, dgp2_spec, dgp3_spec, run_experiment, simulate_individual
from .sumstats import (
    JointSummaryStats,
    MarginalSummaryStats,
    first_stage_f,
    joint_from_individual,
    marginal_from_individual,
    marginal_to_joint,
    select_instruments,
)

__version__ = "0.1.0"

__all__ = [
    "ConfidenceInterval",
    "DgpSpec",
    "FitResult",
    "IdentifiabilityReport",
    "InputError",
    "JointSummaryStats",
    "MarginalSummaryStats",
    "NumericalError",
    "ParseError",
    "SpaceTsivError",
    "SpaceTsivResult",
    "SupportSet",
    "ar_statistic",
    "check_assumption_a",
    "check_assumption_c",
    "chi2_cdf",
    "chi2_quantile",
    "ci_by_inversion",
    "default_lambda_path",
    "dgp1_spec",
    "dgp2_spec",
    "dgp3_spec",
    "diagnose",
    "first_stage_f",
    "fit_restricted",
    "joint_from_individual",
    "lambda_max",
    "level_test",
    "marginal_from_individual",
    "marginal_to_joint",
    "q_statistic",
    "run_experiment",
    "select_instruments",
    "simulate_individual",
    "spacetsiv_l0",
    "spacetsiv_l1",
    "tsiv",
    "tsiv_l1_solve",
]
