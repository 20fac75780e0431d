"""Pseudo-market equilibria for random assignment under priced constraints."""

from .diagnostics import envy_test, envy_value_check, ir_test, membership, pareto_test
from .equilibrium import EquilibriumCertificate, SolverConfig, grid_oracle, solve, verify
from .lcs_preprocess import VPolytope, classify, lcs_facets
from .linprog import LpProblem, LpSolution, solve_lp
from .model import (
    ConstraintSystem,
    Instance,
    InstanceError,
    LinearConstraint,
    equal_type_partition,
    load_instance,
    personalized_prices,
    validate,
)
from .pipeline import build_system, prepare

__version__ = "0.1.0"

__all__ = [
    "ConstraintSystem",
    "EquilibriumCertificate",
    "Instance",
    "InstanceError",
    "LinearConstraint",
    "LpProblem",
    "LpSolution",
    "SolverConfig",
    "VPolytope",
    "build_system",
    "classify",
    "envy_test",
    "envy_value_check",
    "equal_type_partition",
    "grid_oracle",
    "ir_test",
    "lcs_facets",
    "load_instance",
    "membership",
    "pareto_test",
    "personalized_prices",
    "prepare",
    "solve",
    "solve_lp",
    "validate",
    "verify",
]
