"""Linear programming layer: a small deterministic simplex solver."""

from .backend import BACKEND
from .solver import (
    EQUAL,
    FEASIBILITY_TOL,
    GREATER_EQUAL,
    KKT_TOL,
    KktReport,
    LESS_EQUAL,
    LpConstraint,
    LpModel,
    LpNumericalError,
    LpSolution,
    LpStatus,
    PIVOT_TOL,
    ResolvableLp,
    check_kkt,
    dump_tableau,
    solve,
)

__all__ = [
    "BACKEND",
    "EQUAL",
    "FEASIBILITY_TOL",
    "GREATER_EQUAL",
    "KKT_TOL",
    "KktReport",
    "LESS_EQUAL",
    "LpConstraint",
    "LpModel",
    "LpNumericalError",
    "LpSolution",
    "LpStatus",
    "PIVOT_TOL",
    "ResolvableLp",
    "check_kkt",
    "dump_tableau",
    "solve",
]
