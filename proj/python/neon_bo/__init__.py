"""Composite Bayesian optimisation with NEON surrogates."""

from ._neon import (
    ConfigError,
    DimensionError,
    DomainError,
    LookupError,
    NumericError,
    Problem,
    Sense,
    brusselator_solve,
    cell_coverage_objective,
    cli,
    default_config,
    ei_point,
    env_model_field,
    initial_design,
    lei_point,
    make_problem,
    normalize_config,
    parameter_count,
    problem_ids,
    random_search,
    run_bo,
    visibility,
    weighted_variance,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "DomainError",
    "LookupError",
    "NumericError",
    "Problem",
    "Sense",
    "brusselator_solve",
    "cell_coverage_objective",
    "cli",
    "default_config",
    "ei_point",
    "env_model_field",
    "initial_design",
    "lei_point",
    "make_problem",
    "normalize_config",
    "parameter_count",
    "problem_ids",
    "random_search",
    "run_bo",
    "visibility",
    "weighted_variance",
]
