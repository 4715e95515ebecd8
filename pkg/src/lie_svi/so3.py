"""so(3)/SO(3) algebra: hat/vee, the Cayley natural chart and its tangent map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_I3 = np.eye(3)


class ChartSingularity(ValueError):
    """Raised when a rotation lies outside the Cayley chart (angle pi)."""


def hat(v) -> np.ndarray:
    a, b, c = np.asarray(v, dtype=float)
    return np.array([[0.0, -c, b], [c, 0.0, -a], [-b, a, 0.0]])


def vee(S, tol: float = 1e-12) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if np.linalg.norm(S + S.T) > tol:
        raise ValueError("not skew-symmetric")
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def cross(a, b) -> np.ndarray:
    """Cross product along the last axis; cheaper than ``np.cross`` on tiny arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack([a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
                     a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
                     a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]], axis=-1)


def cay_matrix(Q: np.ndarray) -> np.ndarray:
    """(I - Q)(I + Q)^-1 for a square matrix ``Q``.

    Solved as (I + Q)^T X^T = (I - Q)^T, which is the same as X (I + Q) = I - Q.
    """
    Q = np.asarray(Q, dtype=float)
    I = np.eye(Q.shape[0])
    return np.linalg.solve((I + Q).T, (I - Q).T).T


def cay(v) -> np.ndarray:
    """Cayley transform of an algebra vector; always a proper rotation."""
    return cay_matrix(hat(v))


def cay_inv(R, tol: float = 1e-12) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if abs(np.linalg.det(_I3 + R)) < tol:
        raise ChartSingularity("chart singularity: rotation angle is pi")
    # the matrix map is an involution; the skew part absorbs roundoff
    S = cay_matrix(R)
    return vee(0.5 * (S - S.T), tol=np.inf)


def dcay(x, y) -> np.ndarray:
    """Directional derivative of ``Cay`` at ``hat(x)`` along ``hat(y)``."""
    X, Y = hat(x), hat(y)
    inv = np.linalg.inv(_I3 + X)
    return -Y @ inv - (_I3 - X) @ inv @ Y @ inv


def body_velocity(xi, xidot) -> np.ndarray:
    """vee(Cay(xi)^T d/dt Cay(xi)) for a chart curve with velocity ``xidot``."""
    return vee(cay(xi).T @ dcay(xi, xidot), tol=1e-9)


def group_error(R1, R2) -> float:
    """Spectral norm of ``R1 - R2`` in the 3x3 embedding."""
    return float(np.linalg.norm(np.asarray(R1) - np.asarray(R2), 2))


def orthogonality_defect(R) -> float:
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(R.T @ R - _I3))


@dataclass(frozen=True)
class ChartHealth:
    max_stage_norm: float
    warn_threshold: float

    @property
    def status(self) -> str:
        return "near-singular" if self.max_stage_norm >= self.warn_threshold else "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def chart_guard(stages, warn_threshold: float = 1.0) -> ChartHealth:
    """Largest stage coordinate norm, flagged against ``warn_threshold``.

    ``stages`` is either an (k, 3) array or anything with an ``xis`` attribute.
    """
    if warn_threshold <= 0:
        raise ValueError("warn_threshold must be positive")
    xis = np.asarray(getattr(stages, "xis", stages), dtype=float).reshape(-1, 3)
    norm = float(np.max(np.linalg.norm(xis, axis=1))) if len(xis) else 0.0
    return ChartHealth(norm, warn_threshold)
