"""Pure-Python reference kernels; the compiled ``_kernels`` module mirrors them."""

import math

import numpy as np


def lagrangian_terms(xi, xidot, inertia, u, rho, with_potential):
    """Coordinate Lagrangian and its partials at k chart points.

    Kinetic part ``2/(1+|xi|^2)^2 sum_i I_i w_i^2`` with ``w = xidot + xi x xidot``;
    potential part ``u^T Cay(xi) rho`` when ``with_potential`` is set.
    """
    xi = np.asarray(xi, dtype=float)
    xidot = np.asarray(xidot, dtype=float)
    I = np.asarray(inertia, dtype=float)
    s = np.einsum("ki,ki->k", xi, xi)
    f = 1.0 + s
    w = xidot + np.cross(xi, xidot)
    Iw = I * w
    quad = np.einsum("ki,ki->k", Iw, w)
    L = 2.0 * quad / f**2
    dxidot = (4.0 / f**2)[:, None] * (Iw - np.cross(xi, Iw))
    dxi = (-8.0 * quad / f**3)[:, None] * xi + (4.0 / f**2)[:, None] * np.cross(xidot, Iw)
    if with_potential:
        u = np.asarray(u, dtype=float)
        rho = np.asarray(rho, dtype=float)
        urho = float(u @ rho)
        rxu = np.cross(rho, u)
        ux = xi @ u
        rx = xi @ rho
        g = ux * rx - s * urho - xi @ rxu
        L = L + urho + 2.0 * g / f
        dg = ux[:, None] * rho + rx[:, None] * u - 2.0 * urho * xi - rxu
        dxi = dxi + (2.0 / f)[:, None] * dg - (4.0 * g / f**2)[:, None] * xi
    return L, dxi, dxidot


def _axis_flow(R, y, axis, theta):
    # body momentum rotates by -theta about the axis; R picks up +theta
    c, s = math.cos(theta), math.sin(theta)
    j, k = (axis + 1) % 3, (axis + 2) % 3
    yj, yk = y[j], y[k]
    y[j] = c * yj + s * yk
    y[k] = -s * yj + c * yk
    for r in range(3):
        a, b = R[r][j], R[r][k]
        R[r][j] = c * a + s * b
        R[r][k] = -s * a + c * b


def _kick(R, y, dt, mg, rho):
    # torque mg * rho x (R^T e3)
    g0, g1, g2 = R[2][0], R[2][1], R[2][2]
    y[0] += dt * mg * (rho[1] * g2 - rho[2] * g1)
    y[1] += dt * mg * (rho[2] * g0 - rho[0] * g2)
    y[2] += dt * mg * (rho[0] * g1 - rho[1] * g0)


def split_rigid_body(R0, y0, inertia, h, steps, mg, rho, with_potential, stride):
    """Strang splitting of the (heavy) rigid body into exact axis rotations.

    Returns rotations and body momenta sampled every ``stride`` steps,
    the initial state and the final state included.
    """
    R = [list(map(float, row)) for row in np.asarray(R0, dtype=float)]
    y = [float(v) for v in y0]
    I = [float(v) for v in inertia]
    rho = [float(v) for v in rho]
    half = 0.5 * h
    n_out = steps // stride + 1 + (1 if steps % stride else 0)
    Rs = np.empty((n_out, 3, 3))
    ys = np.empty((n_out, 3))
    Rs[0], ys[0] = R, y
    out = 1
    for k in range(1, steps + 1):
        if with_potential:
            _kick(R, y, half, mg, rho)
        _axis_flow(R, y, 0, half * y[0] / I[0])
        _axis_flow(R, y, 1, half * y[1] / I[1])
        _axis_flow(R, y, 2, h * y[2] / I[2])
        _axis_flow(R, y, 1, half * y[1] / I[1])
        _axis_flow(R, y, 0, half * y[0] / I[0])
        if with_potential:
            _kick(R, y, half, mg, rho)
        if k % stride == 0 or k == steps:
            Rs[out], ys[out] = R, y
            out += 1
    return Rs, ys
