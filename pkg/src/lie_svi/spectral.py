"""Chebyshev-Lobatto stage nodes, Lagrange bases and Gauss-Legendre rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StageNodes:
    h: float
    nodes: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes) - 1


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    @property
    def m(self) -> int:
        return len(self.points)

    def integrate(self, f, a: float = 0.0, b: float = 1.0) -> float:
        t = a + (b - a) * self.points
        return float((b - a) * np.dot(self.weights, f(t)))


def chebyshev_lobatto_nodes(n: int, h: float) -> StageNodes:
    """The n+1 points ``h/2 cos(i pi/n) + h/2``, i = 0..n, in ascending order."""
    if n < 1:
        raise ValueError("need n >= 1")
    if h <= 0:
        raise ValueError("need h > 0")
    i = np.arange(n, -1, -1)
    t = 0.5 * h * np.cos(i * np.pi / n) + 0.5 * h
    # pin the endpoints and the symmetric centre exactly
    t[0], t[-1] = 0.0, float(h)
    if n % 2 == 0:
        t[n // 2] = 0.5 * h
    return StageNodes(float(h), t)


def barycentric_weights(nodes) -> np.ndarray:
    t = np.asarray(nodes, dtype=float)
    diff = t[:, None] - t[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        raise ValueError("duplicate nodes")
    # rescale by the interval length to keep the products in range
    scale = 4.0 / (t.max() - t.min()) if len(t) > 1 else 1.0
    return 1.0 / np.prod(diff * scale, axis=1)


def differentiation_matrix(nodes) -> np.ndarray:
    """D[j, i] = derivative of the i-th Lagrange polynomial at node j."""
    t = np.asarray(nodes, dtype=float)
    w = barycentric_weights(t)
    diff = t[:, None] - t[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def _evaluation_matrix(t: np.ndarray, w: np.ndarray, s: np.ndarray) -> np.ndarray:
    E = np.empty((len(s), len(t)))
    for k, sk in enumerate(s):
        d = sk - t
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            q = w / d
            row = q / q.sum()
        if np.all(np.isfinite(row)):
            E[k] = row
        else:
            # on (or within overflow distance of) a node
            E[k] = 0.0
            E[k, int(np.argmin(np.abs(d)))] = 1.0
    return E


def lagrange_matrices(nodes, eval_points):
    """Lagrange basis values and derivatives.

    Returns ``(phi, dphi)`` with ``phi[i, j] = phi_i(s_j)`` and
    ``dphi[i, j] = phi_i'(s_j)``.
    """
    t = np.asarray(getattr(nodes, "nodes", nodes), dtype=float)
    s = np.atleast_1d(np.asarray(eval_points, dtype=float))
    w = barycentric_weights(t)
    E = _evaluation_matrix(t, w, s)
    # phi_i' has degree n-1, so interpolating its nodal values is exact
    dE = E @ differentiation_matrix(t)
    return E.T, dE.T


def gauss_legendre_rule(m: int) -> QuadratureRule:
    """m-point Gauss-Legendre rule on [0, 1] via the Golub-Welsch eigenproblem."""
    if m < 1:
        raise ValueError("need m >= 1")
    k = np.arange(1, m)
    beta = k / np.sqrt(4.0 * k * k - 1.0)
    jacobi = np.diag(beta, 1) + np.diag(beta, -1)
    x, V = np.linalg.eigh(jacobi)
    w = 2.0 * V[0] ** 2
    # symmetrise against eigensolver roundoff
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w)


@dataclass(frozen=True)
class BasisTableau:
    """Stage basis sampled at the quadrature points of one step.

    ``phi`` and ``dphi`` have shape (m, n+1): row j maps stage values to the
    curve value (derivative) at ``c_j h``.
    """

    stage_nodes: StageNodes
    quad: QuadratureRule
    phi: np.ndarray
    dphi: np.ndarray
    phi_at_0: np.ndarray
    phi_at_h: np.ndarray
    dphi_at_0: np.ndarray
    dphi_at_h: np.ndarray

    @property
    def h(self) -> float:
        return self.stage_nodes.h

    @property
    def n(self) -> int:
        return self.stage_nodes.n

    def evaluate(self, t):
        return lagrange_matrices(self.stage_nodes, t)


def build_tableau(n: int, h: float, m: int | None = None) -> BasisTableau:
    nodes = chebyshev_lobatto_nodes(n, h)
    quad = gauss_legendre_rule(n + 1 if m is None else m)
    phi, dphi = lagrange_matrices(nodes, quad.points * h)
    ends, dends = lagrange_matrices(nodes, [0.0, h])
    return BasisTableau(
        nodes, quad, phi.T.copy(), dphi.T.copy(),
        ends[:, 0].copy(), ends[:, 1].copy(), dends[:, 0].copy(), dends[:, 1].copy(),
    )
