"""Spectral variational integrators on SO(3) in Cayley natural charts."""

from ._backend import BACKEND
from .diagnostics import (
    ConvergenceTable,
    ReferenceTrajectory,
    body_momentum,
    energy,
    fit_rate,
    invariants,
    splitting_oracle,
    trajectory_error,
)
from .models import ModelSpec, inertia_from_jd, pendulum, rigid_body
from .so3 import cay, cay_inv, chart_guard, dcay, group_error, hat, vee
from .spectral import build_tableau, chebyshev_lobatto_nodes, gauss_legendre_rule, lagrange_matrices
from .stepper import (
    IntegrationError,
    NonConvergenceError,
    SolverOptions,
    StepResult,
    Trajectory,
    eval_curve,
    integrate,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConvergenceTable", "IntegrationError", "ModelSpec", "NonConvergenceError",
    "ReferenceTrajectory", "SolverOptions", "StepResult", "Trajectory", "body_momentum",
    "build_tableau", "cay", "cay_inv", "chart_guard", "chebyshev_lobatto_nodes", "dcay",
    "energy", "eval_curve", "fit_rate", "gauss_legendre_rule", "group_error", "hat",
    "inertia_from_jd", "integrate", "invariants", "lagrange_matrices", "pendulum",
    "rigid_body", "splitting_oracle", "step", "trajectory_error", "vee",
]
