"""Linear and mixed-integer programming: instances, simplex, branch and bound."""

from .instance import (BINARY, CONTINUOUS, EQ, GE, INTEGER, LE, LpInstance, MilpInstance,
                       ModelBuilder, from_arrays)
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LpSolution, SolverError, simplex_solve

__all__ = [
    "BINARY", "CONTINUOUS", "INTEGER", "LE", "GE", "EQ",
    "LpInstance", "MilpInstance", "ModelBuilder", "from_arrays",
    "LpSolution", "SolverError", "simplex_solve", "OPTIMAL", "INFEASIBLE", "UNBOUNDED",
]
