"""Weighted-sum energy-efficiency power control by sequential convex optimization."""
from .model import (
    GeneralPowerUser,
    MultiRbInstance,
    NetworkInstance,
    UserLink,
    ee,
    is_feasible,
    rate,
    sinr,
    wsee,
    wsr,
)
from .sco import (
    ScoOptions,
    ScoResult,
    certify_kkt,
    wsee_maximize,
    wsee_maximize_general,
    wsee_maximize_multi_rb,
    wsr_maximize,
)
from .solver import ConvexProgram, CanonicalFunction, SolverOptions, solve

__version__ = "0.1.0"

__all__ = [
    "GeneralPowerUser", "MultiRbInstance", "NetworkInstance", "UserLink", "ee", "is_feasible",
    "rate", "sinr", "wsee", "wsr", "ScoOptions", "ScoResult", "certify_kkt", "wsee_maximize",
    "wsee_maximize_general", "wsee_maximize_multi_rb", "wsr_maximize", "ConvexProgram",
    "CanonicalFunction", "SolverOptions", "solve",
]
