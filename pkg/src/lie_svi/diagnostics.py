"""Conserved quantities, error metrics, rate fits and the splitting reference.

The splitting reference integrates the same models with exact single-axis
rotations and potential kicks (Strang composition, second order). It shares
no assembly code with the Galerkin stepper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3
from ._backend import kernels


@dataclass(frozen=True)
class InvariantSample:
    t: float
    energy: float
    y: np.ndarray
    C: float
    H: float
    orthogonality_defect: float


def body_momentum(model, R, Omega) -> np.ndarray:
    return model.inertia.I * np.asarray(Omega, dtype=float)


def invariants(y, I):
    """``C = sum y^2 / 2`` and ``H = sum y^2 / (2 I)``."""
    y = np.asarray(y, dtype=float)
    I = np.asarray(I, dtype=float)
    if np.any(I <= 0):
        raise ValueError("inertia coefficients must be positive")
    return 0.5 * float(y @ y), 0.5 * float(np.sum(y * y / I))


def energy(model, R, Omega) -> float:
    """Kinetic plus potential energy, from the model's matrix form."""
    R = np.asarray(R, dtype=float)
    Rdot = R @ so3.hat(Omega)
    return model.kinetic_matrix(R, Rdot) - model.potential_matrix(R)


def sample(model, t, R, Omega) -> InvariantSample:
    y = body_momentum(model, R, Omega)
    C, H = invariants(y, model.inertia.I)
    return InvariantSample(t, energy(model, R, Omega), y, C, H, so3.orthogonality_defect(R))


@dataclass
class ReferenceTrajectory:
    """Sampled trajectory: times, rotations and body velocities."""

    times: np.ndarray
    rotations: np.ndarray
    omegas: np.ndarray

    def __len__(self):
        return len(self.times)


def splitting_oracle(model, R0, Omega0, h_small: float, steps: int, stride: int = 1,
                     backend=None) -> ReferenceTrajectory:
    """Strang splitting reference, sampled every ``stride`` steps (and at the end)."""
    if h_small <= 0:
        raise ValueError("h_small must be positive")
    k = backend or kernels
    I = model.inertia.I
    y0 = I * np.asarray(Omega0, dtype=float)
    pot = model.potential
    # Lagrangian kinetic term is s/2 Omega^T J Omega with s = 2*kinetic_scale
    scale = 2.0 * model.kinetic_scale
    if pot is None:
        mg, rho, with_pot = 0.0, np.zeros(3), False
    else:
        if not np.allclose(pot.up, [0.0, 0.0, 1.0]):
            raise ValueError("splitting reference assumes the up axis e3")
        mg, rho, with_pot = pot.mg / scale, pot.rho, True
    Rs, ys = k.split_rigid_body(np.asarray(R0, dtype=float), y0, I, float(h_small),
                                int(steps), float(mg), np.asarray(rho, float),
                                with_pot, int(stride))
    idx = [min(i * stride, steps) for i in range(len(Rs))]
    return ReferenceTrajectory(np.asarray(idx, dtype=float) * h_small, Rs, ys / I)


def trajectory_error(a, b, metric=so3.group_error, atol: float = 1e-9) -> float:
    """Largest ``metric`` distance over the sample times both trajectories share."""
    ta, tb = np.asarray(a.times), np.asarray(b.times)
    if len(ta) != len(tb) or not np.allclose(ta, tb, rtol=0, atol=atol):
        raise ValueError("trajectories are sampled at different times")
    return max(metric(Ra, Rb) for Ra, Rb in zip(a.rotations, b.rotations))


@dataclass
class ConvergenceTable:
    parameter: str
    rows: list = field(default_factory=list)

    def add(self, value, step_error, curve_error=float("nan"), ok=True):
        self.rows.append((float(value), float(step_error), float(curve_error), bool(ok)))
        self.rows.sort(key=lambda r: r[0])

    @property
    def values(self):
        return np.array([r[0] for r in self.rows])

    @property
    def step_errors(self):
        return np.array([r[1] for r in self.rows])

    @property
    def curve_errors(self):
        return np.array([r[2] for r in self.rows])


GEOMETRIC = "geometric-in-n"
ALGEBRAIC = "algebraic-in-h"


def fit_rate(table: ConvergenceTable, mode: str, floor: float = 1e-11,
             column: str = "step") -> float:
    """Least-squares slope of log(error) against n, or against log(h).

    Rows below ``floor`` (solver noise), non-finite or failed are dropped.
    """
    if mode not in (GEOMETRIC, ALGEBRAIC):
        raise ValueError(f"unknown mode {mode!r}")
    err = table.step_errors if column == "step" else table.curve_errors
    x = table.values
    ok = np.array([r[3] for r in table.rows], dtype=bool) if table.rows else np.array([], bool)
    keep = ok & np.isfinite(err) & (err >= floor)
    if keep.sum() < 3:
        raise ValueError(f"need at least 3 usable rows above {floor:g}, have {int(keep.sum())}")
    xs = x[keep] if mode == GEOMETRIC else np.log(x[keep])
    return float(np.polyfit(xs, np.log(err[keep]), 1)[0])


def expected_order(n: int) -> int:
    return n if n % 2 == 0 else n - 1
