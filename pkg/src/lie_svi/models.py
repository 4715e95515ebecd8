"""Free rigid body and 3D pendulum Lagrangians on SO(3).

Each model carries two forms of its Lagrangian: the matrix form
``tr(Rdot^T R J_d R^T Rdot)`` used for diagnostics, and the Cayley chart
coordinate form used to assemble the discrete action. The coordinate kinetic
term is ``2/(1+|xi|^2)^2 sum_i I_i w_i^2`` with ``w = xidot + xi x xidot``,
which equals ``1/2 Omega^T J Omega``; the rigid body matrix form carries no
1/2, the pendulum one does, so the two differ by a constant factor for the
free body only. Constant factors do not move stationary points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3
from ._backend import kernels

E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class InertiaSpec:
    jd: np.ndarray
    j: np.ndarray

    @property
    def I(self) -> np.ndarray:
        """Coefficients ``I_i = sum_{j != i} (J_d)_jj``, equal to diag(J)."""
        return self.j

    @property
    def Jd(self) -> np.ndarray:
        return np.diag(self.jd)

    @property
    def J(self) -> np.ndarray:
        return np.diag(self.j)


def inertia_from_jd(jd) -> InertiaSpec:
    jd = np.asarray(jd, dtype=float).reshape(3)
    if np.any(jd <= 0) or not np.all(np.isfinite(jd)):
        raise ValueError(f"nonstandard inertia entries must be positive, got {jd}")
    return InertiaSpec(jd, jd.sum() - jd)


def jd_from_j(j) -> np.ndarray:
    j = np.asarray(j, dtype=float)
    return 0.5 * j.sum() - j


@dataclass(frozen=True)
class Potential:
    mass: float = 1.0
    gravity: float = 1.0
    rho: np.ndarray = field(default_factory=lambda: E3.copy())
    up: np.ndarray = field(default_factory=lambda: E3.copy())

    def __post_init__(self):
        vals = [self.mass, self.gravity, *np.ravel(self.rho), *np.ravel(self.up)]
        if not np.all(np.isfinite(vals)):
            raise ValueError("potential parameters must be finite")
        if self.mass < 0 or self.gravity < 0:
            raise ValueError("mass and gravity must be nonnegative")

    @property
    def mg(self) -> float:
        return self.mass * self.gravity


@dataclass(frozen=True)
class ModelSpec:
    """A Lagrangian on SO(3): kinetic term plus an optional gravity potential."""

    inertia: InertiaSpec
    potential: Potential | None = None
    kinetic_scale: float = 1.0
    name: str = "rigid_body"

    # -- matrix form ------------------------------------------------------
    def kinetic_matrix(self, R, Rdot) -> float:
        R = np.asarray(R, dtype=float)
        Rdot = np.asarray(Rdot, dtype=float)
        B = R.T @ Rdot
        if np.linalg.norm(B + B.T) > 1e-10 * max(1.0, np.linalg.norm(B)):
            raise ValueError("Rdot is not tangent to SO(3) at R")
        return self.kinetic_scale * float(np.trace(Rdot.T @ R @ self.inertia.Jd @ R.T @ Rdot))

    def potential_matrix(self, R) -> float:
        """The gravity term as it appears in the Lagrangian (L = K + this)."""
        if self.potential is None:
            return 0.0
        p = self.potential
        return p.mg * float(p.up @ np.asarray(R) @ p.rho)

    def lagrangian_matrix(self, R, Rdot) -> float:
        return self.kinetic_matrix(R, Rdot) + self.potential_matrix(R)

    # -- chart coordinates -------------------------------------------------
    def _u(self, base) -> np.ndarray:
        # the coordinate kinetic term is 1/2 Omega^T J Omega; rescale the
        # potential so both terms keep their matrix-form ratio
        p = self.potential
        return p.mg / (2.0 * self.kinetic_scale) * (np.asarray(base, dtype=float).T @ p.up)

    def kinetic_coords(self, xi, xidot) -> float:
        L, _, _ = kernels.lagrangian_terms(
            np.reshape(xi, (1, 3)), np.reshape(xidot, (1, 3)), self.inertia.I,
            np.zeros(3), np.zeros(3), False,
        )
        return float(L[0])

    def potential_coords(self, base, xi) -> float:
        if self.potential is None:
            raise ValueError("model has no potential configured")
        return float(self._u(base) @ so3.cay(xi) @ self.potential.rho)

    def base_gradient(self, base, xi, weights) -> np.ndarray:
        """Derivative of ``sum_j w_j L(xi_j)`` under ``base -> base Cay(delta)`` with the
        chart points ``xi_j`` held fixed; only the potential depends on the base."""
        if self.potential is None:
            return np.zeros(3)
        xi = np.asarray(xi, dtype=float)
        rho = self.potential.rho
        s = np.einsum("ij,ij->i", xi, xi)
        xr = so3.cross(xi, rho)
        # Cay(xi) rho = rho + 2 (xi x (xi x rho) - xi x rho) / (1 + s)
        images = rho + 2.0 * (so3.cross(xi, xr) - xr) / (1.0 + s)[:, None]
        return 2.0 * so3.cross(self._u(base), np.asarray(weights) @ images)

    def coordinate_terms(self, base, xi, xidot):
        """Lagrangian, dL/dxi and dL/dxidot at a batch of chart points (k, 3)."""
        if self.potential is None:
            return kernels.lagrangian_terms(
                xi, xidot, self.inertia.I, np.zeros(3), np.zeros(3), False)
        return kernels.lagrangian_terms(
            xi, xidot, self.inertia.I, self._u(base), self.potential.rho, True)

    def lagrangian_coords(self, base, xi, xidot) -> float:
        L, _, _ = self.coordinate_terms(base, np.reshape(xi, (1, 3)), np.reshape(xidot, (1, 3)))
        return float(L[0])

    def coordinate_gradients(self, base, xi, xidot):
        _, dxi, dxidot = self.coordinate_terms(
            base, np.reshape(xi, (1, 3)), np.reshape(xidot, (1, 3)))
        return dxi[0], dxidot[0]

    def scaled(self, c: float) -> "ScaledModel":
        return ScaledModel(self, c)


@dataclass(frozen=True)
class ScaledModel:
    """``c`` times another model's Lagrangian; same trajectories."""

    base_model: ModelSpec
    factor: float

    @property
    def inertia(self):
        return self.base_model.inertia

    @property
    def potential(self):
        return self.base_model.potential

    @property
    def name(self):
        return self.base_model.name

    def coordinate_terms(self, base, xi, xidot):
        L, dxi, dxidot = self.base_model.coordinate_terms(base, xi, xidot)
        return self.factor * L, self.factor * dxi, self.factor * dxidot

    def kinetic_coords(self, xi, xidot):
        return self.factor * self.base_model.kinetic_coords(xi, xidot)

    def base_gradient(self, base, xi, weights):
        return self.factor * self.base_model.base_gradient(base, xi, weights)


def rigid_body(jd=(1.3, 2.1, 1.2)) -> ModelSpec:
    return ModelSpec(inertia_from_jd(jd), None, 1.0, "rigid_body")


def pendulum(jd=(1.0, 2.8, 2.0), mass=1.0, gravity=9.81, rho=(0.0, 0.0, 1.0)) -> ModelSpec:
    pot = Potential(float(mass), float(gravity), np.asarray(rho, dtype=float))
    return ModelSpec(inertia_from_jd(jd), pot, 0.5, "pendulum")
