# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``_kernels_py``."""

import numpy as np
from libc.math cimport cos, sin


def lagrangian_terms(xi, xidot, inertia, u, rho, bint with_potential):
    cdef double[:, ::1] X = np.ascontiguousarray(xi, dtype=np.float64)
    cdef double[:, ::1] V = np.ascontiguousarray(xidot, dtype=np.float64)
    cdef double[::1] I = np.ascontiguousarray(inertia, dtype=np.float64)
    cdef double[::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] P = np.ascontiguousarray(rho, dtype=np.float64)
    cdef Py_ssize_t k, npts = X.shape[0]
    L_arr = np.empty(npts)
    dxi_arr = np.empty((npts, 3))
    dv_arr = np.empty((npts, 3))
    cdef double[::1] L = L_arr
    cdef double[:, ::1] dxi = dxi_arr
    cdef double[:, ::1] dv = dv_arr
    cdef double a, b, c, va, vb, vc, s, f, f2, wa, wb, wc, Ia, Ib, Ic, quad, c4, c8
    cdef double urho, rxu0, rxu1, rxu2, ux, rx, g, dg0, dg1, dg2, c2
    urho = U[0] * P[0] + U[1] * P[1] + U[2] * P[2]
    rxu0 = P[1] * U[2] - P[2] * U[1]
    rxu1 = P[2] * U[0] - P[0] * U[2]
    rxu2 = P[0] * U[1] - P[1] * U[0]
    for k in range(npts):
        a = X[k, 0]; b = X[k, 1]; c = X[k, 2]
        va = V[k, 0]; vb = V[k, 1]; vc = V[k, 2]
        s = a * a + b * b + c * c
        f = 1.0 + s
        f2 = f * f
        wa = va + b * vc - c * vb
        wb = vb + c * va - a * vc
        wc = vc + a * vb - b * va
        Ia = I[0] * wa; Ib = I[1] * wb; Ic = I[2] * wc
        quad = Ia * wa + Ib * wb + Ic * wc
        L[k] = 2.0 * quad / f2
        c4 = 4.0 / f2
        c8 = -8.0 * quad / (f2 * f)
        dv[k, 0] = c4 * (Ia - (b * Ic - c * Ib))
        dv[k, 1] = c4 * (Ib - (c * Ia - a * Ic))
        dv[k, 2] = c4 * (Ic - (a * Ib - b * Ia))
        dxi[k, 0] = c8 * a + c4 * (vb * Ic - vc * Ib)
        dxi[k, 1] = c8 * b + c4 * (vc * Ia - va * Ic)
        dxi[k, 2] = c8 * c + c4 * (va * Ib - vb * Ia)
        if with_potential:
            ux = a * U[0] + b * U[1] + c * U[2]
            rx = a * P[0] + b * P[1] + c * P[2]
            g = ux * rx - s * urho - (a * rxu0 + b * rxu1 + c * rxu2)
            L[k] += urho + 2.0 * g / f
            dg0 = ux * P[0] + rx * U[0] - 2.0 * urho * a - rxu0
            dg1 = ux * P[1] + rx * U[1] - 2.0 * urho * b - rxu1
            dg2 = ux * P[2] + rx * U[2] - 2.0 * urho * c - rxu2
            c2 = 2.0 / f
            c4 = 4.0 * g / f2
            dxi[k, 0] += c2 * dg0 - c4 * a
            dxi[k, 1] += c2 * dg1 - c4 * b
            dxi[k, 2] += c2 * dg2 - c4 * c
    return L_arr, dxi_arr, dv_arr


cdef inline void _axis_flow(double[:, ::1] R, double* y, int axis, double theta) noexcept nogil:
    cdef double cs = cos(theta), sn = sin(theta), yj, yk, p, q
    cdef int j = (axis + 1) % 3, k = (axis + 2) % 3, r
    yj = y[j]; yk = y[k]
    y[j] = cs * yj + sn * yk
    y[k] = -sn * yj + cs * yk
    for r in range(3):
        p = R[r, j]; q = R[r, k]
        R[r, j] = cs * p + sn * q
        R[r, k] = -sn * p + cs * q


cdef inline void _kick(double[:, ::1] R, double* y, double dt, double mg, double* rho) noexcept nogil:
    cdef double g0 = R[2, 0], g1 = R[2, 1], g2 = R[2, 2]
    y[0] += dt * mg * (rho[1] * g2 - rho[2] * g1)
    y[1] += dt * mg * (rho[2] * g0 - rho[0] * g2)
    y[2] += dt * mg * (rho[0] * g1 - rho[1] * g0)


def split_rigid_body(R0, y0, inertia, double h, long steps, double mg, rho,
                     bint with_potential, long stride):
    R_arr = np.array(R0, dtype=np.float64, order="C")
    cdef double[:, ::1] R = R_arr
    cdef double y[3]
    cdef double I[3]
    cdef double p[3]
    cdef int i
    for i in range(3):
        y[i] = float(y0[i]); I[i] = float(inertia[i]); p[i] = float(rho[i])
    cdef long n_out = steps // stride + 1 + (1 if steps % stride else 0)
    Rs_arr = np.empty((n_out, 3, 3))
    ys_arr = np.empty((n_out, 3))
    cdef double[:, :, ::1] Rs = Rs_arr
    cdef double[:, ::1] ys = ys_arr
    cdef double half = 0.5 * h
    cdef long k, out = 1
    Rs[0, :, :] = R
    for i in range(3):
        ys[0, i] = y[i]
    with nogil:
        for k in range(1, steps + 1):
            if with_potential:
                _kick(R, y, half, mg, p)
            _axis_flow(R, y, 0, half * y[0] / I[0])
            _axis_flow(R, y, 1, half * y[1] / I[1])
            _axis_flow(R, y, 2, h * y[2] / I[2])
            _axis_flow(R, y, 1, half * y[1] / I[1])
            _axis_flow(R, y, 0, half * y[0] / I[0])
            if with_potential:
                _kick(R, y, half, mg, p)
            if k % stride == 0 or k == steps:
                Rs[out, :, :] = R
                for i in range(3):
                    ys[out, i] = y[i]
                out += 1
    return Rs_arr, ys_arr
