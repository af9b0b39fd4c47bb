"""Derivatives of the solution map of quadratic cone programs.

Forward-mode (`jvp`) and reverse-mode (`vjp`) derivatives of the map from
problem data ``(P, A, q, b)`` to a primal-dual solution ``(x, y, s)``,
computed by differentiating a projection-based residual of the homogeneous
self-dual embedding and solving the resulting linear systems with LSMR.

The headline entry points are re-exported here; the full calculus
(embedding maps, derivative operators, the LSMR solver, synthetic problem
generators) lives in the submodules.
"""

from conegrad.cones import (
    ConeBlock,
    ConeSpec,
    dproject,
    dproject_dual,
    dprojection,
    dprojection_dual,
    project,
    project_dual,
)
from conegrad.embedding import DataPerturbation, ProblemData
from conegrad.errors import (
    ConegradError,
    DomainError,
    NotDifferentiableError,
    NumericalError,
    ValidationError,
)
from conegrad.solution_map import (
    Diagnostics,
    KktReport,
    Solution,
    SolutionDelta,
    check_solution,
    embed,
    jvp,
    phi,
    vjp,
)
from conegrad.sparse import CscMatrix

__version__ = "0.1.0"

__all__ = [
    "ConeBlock",
    "ConeSpec",
    "ConegradError",
    "CscMatrix",
    "DataPerturbation",
    "Diagnostics",
    "DomainError",
    "KktReport",
    "NotDifferentiableError",
    "NumericalError",
    "ProblemData",
    "Solution",
    "SolutionDelta",
    "ValidationError",
    "check_solution",
    "dproject",
    "dproject_dual",
    "dprojection",
    "dprojection_dual",
    "embed",
    "jvp",
    "phi",
    "project",
    "project_dual",
    "vjp",
]
