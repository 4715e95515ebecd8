"""One-step map of the Lie group spectral variational integrator.

A step based at ``R_k`` parametrises the Galerkin curve as
``R_k Cay(sum_i xi^i phi_i(t))`` over Chebyshev-Lobatto stage nodes with
``xi^0 = 0``. The unknowns ``xi^1..xi^n`` solve the interior stationarity
equations of the quadrature action together with momentum matching against
the previous step, whose momentum lives in the previous chart.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .spectral import BasisTableau, build_tableau, lagrange_matrices

log = logging.getLogger(__name__)

_EPS_SQRT = math.sqrt(np.finfo(float).eps)
GUESS_MODES = ("zero", "constant-velocity")
BOUNDARY_MODES = ("moving-base", "fixed-chart")


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residual=float("nan"), step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class TransitionSingularity(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    residual_tol: float = 1e-12
    max_iters: int = 50
    fd_step: float = _EPS_SQRT
    initial_guess_mode: str = "constant-velocity"
    max_halvings: int = 8
    boundary: str = "moving-base"
    polish_steps: int = 2

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.initial_guess_mode not in GUESS_MODES:
            raise ValueError(f"initial_guess_mode must be one of {GUESS_MODES}")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
        if self.polish_steps < 0:
            raise ValueError("polish_steps must be nonnegative")


@dataclass(frozen=True)
class StageConfiguration:
    base: np.ndarray
    xis: np.ndarray

    def __post_init__(self):
        xis = np.asarray(self.xis, dtype=float)
        if xis.ndim != 2 or xis.shape[1] != 3:
            raise ValueError("stage coordinates must have shape (n+1, 3)")
        object.__setattr__(self, "xis", xis)
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))

    @property
    def n(self) -> int:
        return len(self.xis) - 1


@dataclass(frozen=True)
class StepResult:
    next: np.ndarray
    stages: StageConfiguration
    boundary_momentum_plus: np.ndarray
    boundary_momentum_minus: np.ndarray
    iterations: int
    residual: float
    chart_health: so3.ChartHealth
    residual_history: tuple = ()


# -- chart transitions ------------------------------------------------------

def _denominator_check(d: float):
    if abs(d) <= 1e-12:
        raise TransitionSingularity("transition singularity")


def chart_transition(xi0, xik) -> np.ndarray:
    """Coordinates, in the chart of ``Cay(xi0)``'s predecessor, of ``Cay(xi0) Cay(xik)``."""
    x0 = np.asarray(xi0, dtype=float)
    x = np.asarray(xik, dtype=float)
    d = -1.0 + x0 @ x
    _denominator_check(d)
    return (-x - x0 + np.cross(x0, x)) / d


def chart_transition_inv(xi0, lam) -> np.ndarray:
    x0 = np.asarray(xi0, dtype=float)
    lam = np.asarray(lam, dtype=float)
    d = 1.0 + lam @ x0
    _denominator_check(d)
    return (lam - x0 + np.cross(x0, lam)) / d


def transition_jacobian(xi0, lam) -> np.ndarray:
    """d xi / d lambda of :func:`chart_transition_inv` (quotient rule)."""
    x0 = np.asarray(xi0, dtype=float)
    lam = np.asarray(lam, dtype=float)
    d = 1.0 + lam @ x0
    _denominator_check(d)
    num = lam - x0 + np.cross(x0, lam)
    return (np.eye(3) + so3.hat(x0)) / d - np.outer(num, x0) / d**2


# -- discrete action ---------------------------------------------------------

def _check(tab: BasisTableau, stages: StageConfiguration):
    if stages.n != tab.n:
        raise ValueError(f"stage count {stages.n + 1} does not match basis size {tab.n + 1}")


def action_and_gradient(model, tab: BasisTableau, stages: StageConfiguration):
    """Quadrature action and its gradient with respect to every stage (n+1, 3)."""
    _check(tab, stages)
    xq = tab.phi @ stages.xis
    vq = tab.dphi @ stages.xis
    L, dxi, dxidot = model.coordinate_terms(stages.base, xq, vq)
    bw = tab.h * tab.quad.weights
    grad = tab.phi.T @ (bw[:, None] * dxi) + tab.dphi.T @ (bw[:, None] * dxidot)
    return float(bw @ L), grad


def discrete_action(model, tab, stages) -> float:
    return action_and_gradient(model, tab, stages)[0]


def internal_residual(model, tab, stages) -> np.ndarray:
    _, grad = action_and_gradient(model, tab, stages)
    return grad[1:-1].ravel()


def _transported(xi):
    # d/d delta of the coordinates of a fixed point when the base moves to base Cay(delta)
    return -np.eye(3) - so3.hat(xi) - np.outer(xi, xi)


def _left_derivative(model, tab, stages, grad, boundary):
    """Left boundary derivative in the chart's own origin coordinates.

    ``fixed-chart`` varies the first stage inside the chart at ``base``;
    ``moving-base`` moves the base point itself with every other curve point
    fixed, so the chart rides along with the left endpoint.
    """
    if boundary == "fixed-chart":
        return grad[0]
    xis = stages.xis
    g, x = grad[1:], xis[1:]
    # sum_i g_i @ _transported(xi_i), summed in closed form
    d = -g.sum(axis=0) + so3.cross(x, g).sum(axis=0) - np.einsum("ij,ij->i", g, x) @ x
    bw = tab.h * tab.quad.weights
    return d + model.base_gradient(stages.base, tab.phi @ xis, bw)


def boundary_momenta(model, tab, stages, prev_endpoint=None, boundary="moving-base"):
    """``(d1, d2)``: left boundary derivative in the previous chart, right one in this chart."""
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
    _, grad = action_and_gradient(model, tab, stages)
    d1 = _left_derivative(model, tab, stages, grad, boundary)
    if prev_endpoint is not None:
        d1 = d1 @ transition_jacobian(prev_endpoint, prev_endpoint)
    return d1, grad[-1].copy()


# -- momenta -----------------------------------------------------------------

def initialize_first_step(model, R0, Omega0) -> np.ndarray:
    """Chart momentum dL/dxidot at the origin of the chart based at ``R0``.

    The chart velocity ``-Omega0/2`` reproduces body velocity ``Omega0``.
    """
    xidot = -0.5 * np.asarray(Omega0, dtype=float)
    _, _, p = model.coordinate_terms(R0, np.zeros((1, 3)), xidot.reshape(1, 3))
    return p[0]


def chart_momentum_to_body(p) -> np.ndarray:
    """Body angular momentum from chart momentum at the chart origin (y = -p/2)."""
    return -0.5 * np.asarray(p, dtype=float)


def carry_momentum(d2, endpoint) -> np.ndarray:
    """Re-express a right-boundary momentum at the origin of the next chart."""
    T = transition_jacobian(endpoint, endpoint)
    return np.linalg.solve(T.T, d2)


def constant_velocity_guess(tab: BasisTableau, Omega) -> np.ndarray:
    """Stage coordinates of a uniform rotation at body velocity ``Omega``."""
    Omega = np.asarray(Omega, dtype=float)
    t = tab.stage_nodes.nodes
    speed = float(np.linalg.norm(Omega))
    if speed == 0.0:
        return np.zeros((len(t), 3))
    half_angle = np.minimum(0.5 * speed * t, 1.4)
    return -np.tan(half_angle)[:, None] * (Omega / speed)[None, :]


# -- Newton ------------------------------------------------------------------

def _fd_jacobian(F, x, r, rel):
    J = np.empty((len(r), len(x)))
    for j in range(len(x)):
        dx = rel * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += dx
        J[:, j] = (F(xp) - r) / (xp[j] - x[j])
    return J


def newton(F, x0, opts: SolverOptions):
    """Damped finite-difference Newton; returns ``(x, residual_history)``."""
    x = np.array(x0, dtype=float)
    r = F(x)
    rn = float(np.max(np.abs(r)))
    history = [rn]
    J = None
    while rn > opts.residual_tol:
        if len(history) > opts.max_iters:
            raise NonConvergenceError(
                f"Newton did not converge in {opts.max_iters} iterations "
                f"(residual {rn:.3e})", rn)
        J = _fd_jacobian(F, x, r, opts.fd_step)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise NonConvergenceError(f"singular Newton matrix ({exc})", rn) from exc
        alpha = 1.0
        for _ in range(opts.max_halvings + 1):
            xt = x + alpha * dx
            rt = F(xt)
            rtn = float(np.max(np.abs(rt)))
            if rtn < rn:
                break
            alpha *= 0.5
        else:
            raise NonConvergenceError(
                f"Newton stalled at residual {rn:.3e} after {len(history) - 1} iterations", rn)
        x, r, rn = xt, rt, rtn
        history.append(rn)
    if J is not None:
        # polish towards roundoff with the last Jacobian; a residual left at the
        # tolerance each step biases the invariants into a slow drift
        for _ in range(opts.polish_steps):
            xt = x + np.linalg.solve(J, -r)
            rt = F(xt)
            rtn = float(np.max(np.abs(rt)))
            if not rtn < rn:
                break
            x, r, rn = xt, rt, rtn
            history.append(rn)
    return x, history


def step(model, tab: BasisTableau, prev_momentum, base, guess=None,
         opts: SolverOptions | None = None, prev_endpoint=None,
         warn_threshold: float = 1.0) -> StepResult:
    """Solve one step.

    ``prev_momentum`` is the previous step's right-boundary momentum in the
    previous chart, whose coordinates of ``base`` are ``prev_endpoint``
    (``None`` means the two charts coincide, as for the first step).
    """
    opts = opts or SolverOptions()
    n = tab.n
    base = np.asarray(base, dtype=float)
    p_prev = np.asarray(prev_momentum, dtype=float)
    T = np.eye(3) if prev_endpoint is None else transition_jacobian(prev_endpoint, prev_endpoint)
    if guess is None:
        x0 = np.zeros(3 * n)
    else:
        gx = np.asarray(getattr(guess, "xis", guess), dtype=float)
        if gx.shape != (n + 1, 3):
            raise ValueError("guess has the wrong number of stages")
        if np.any(gx[0] != 0.0):
            raise ValueError("guess must pin the first stage at zero")
        x0 = gx[1:].ravel()

    def residual(x):
        xis = np.vstack([np.zeros((1, 3)), x.reshape(n, 3)])
        stages = StageConfiguration(base, xis)
        _, grad = action_and_gradient(model, tab, stages)
        d1 = _left_derivative(model, tab, stages, grad, opts.boundary)
        return np.concatenate([grad[1:-1].ravel(), p_prev + d1 @ T])

    x, history = newton(residual, x0, opts)
    xis = np.vstack([np.zeros((1, 3)), x.reshape(n, 3)])
    stages = StageConfiguration(base, xis)
    _, grad = action_and_gradient(model, tab, stages)
    health = so3.chart_guard(xis, warn_threshold)
    if not health.ok:
        log.warning("chart near singular: max stage norm %.3f", health.max_stage_norm)
    return StepResult(
        next=base @ so3.cay(xis[-1]),
        stages=stages,
        boundary_momentum_plus=grad[-1].copy(),
        boundary_momentum_minus=_left_derivative(model, tab, stages, grad, opts.boundary) @ T,
        iterations=len(history) - 1,
        residual=history[-1],
        chart_health=health,
        residual_history=tuple(history),
    )


def eval_curve(result: StepResult, tab, t):
    """Rotation and body velocity on the Galerkin curve at ``t`` in [0, h]."""
    nodes = getattr(tab, "stage_nodes", tab)
    if not 0.0 <= t <= nodes.h:
        raise ValueError(f"t={t} outside [0, {nodes.h}]")
    phi, dphi = _basis_at(nodes, t)
    xis = result.stages.xis
    xi = phi @ xis
    xidot = dphi @ xis
    return result.stages.base @ so3.cay(xi), so3.body_velocity(xi, xidot)


def _basis_at(nodes, t):
    phi, dphi = lagrange_matrices(nodes, [t])
    return phi[:, 0], dphi[:, 0]


# -- trajectories ------------------------------------------------------------

class IntegrationError(RuntimeError):
    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"step {step_index}: {cause}")
        self.step_index = step_index
        self.cause = cause


@dataclass
class Trajectory:
    model: object
    tableau: BasisTableau
    rotations: list = field(default_factory=list)
    momenta: list = field(default_factory=list)
    results: list = field(default_factory=list)
    t0: float = 0.0

    @property
    def h(self) -> float:
        return self.tableau.h

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(len(self.rotations))

    @property
    def omegas(self) -> np.ndarray:
        return np.asarray(self.momenta) / self.model.inertia.I

    def dense(self, per_step: int):
        """Galerkin-curve samples: ``per_step`` points per step plus the final one."""
        ts, Rs, Ws = [], [], []
        for k, res in enumerate(self.results):
            for q in range(per_step):
                tau = self.h * q / per_step
                R, W = eval_curve(res, self.tableau, tau)
                ts.append(self.t0 + k * self.h + tau)
                Rs.append(R)
                Ws.append(W)
        if self.results:
            R, W = eval_curve(self.results[-1], self.tableau, self.h)
            ts.append(self.t0 + len(self.results) * self.h)
            Rs.append(R)
            Ws.append(W)
        return np.asarray(ts), np.asarray(Rs), np.asarray(Ws)


def integrate(model, R0, Omega0, h: float, n: int, steps: int,
              opts: SolverOptions | None = None, m: int | None = None,
              warn_threshold: float = 1.0, momentum0=None,
              callback=None) -> Trajectory:
    """Chain ``steps`` one-step maps from ``(R0, Omega0)``.

    ``momentum0`` overrides the start-up chart momentum (e.g. to restart a
    run from a stored discrete momentum).
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    opts = opts or SolverOptions()
    tab = build_tableau(n, h, m)
    R = np.asarray(R0, dtype=float)
    p = initialize_first_step(model, R, Omega0) if momentum0 is None else np.asarray(momentum0, float)
    traj = Trajectory(model, tab)
    traj.rotations.append(R)
    traj.momenta.append(chart_momentum_to_body(p))
    endpoint = None
    for k in range(steps):
        Omega = traj.momenta[-1] / model.inertia.I
        guess = (constant_velocity_guess(tab, Omega)
                 if opts.initial_guess_mode == "constant-velocity" else None)
        try:
            res = step(model, tab, p, R, guess, opts, endpoint, warn_threshold)
        except (NonConvergenceError, TransitionSingularity, so3.ChartSingularity) as exc:
            if isinstance(exc, NonConvergenceError):
                exc.step = k
            raise IntegrationError(k, exc) from exc
        endpoint = res.stages.xis[-1]
        p = res.boundary_momentum_plus
        R = res.next
        traj.results.append(res)
        traj.rotations.append(R)
        traj.momenta.append(chart_momentum_to_body(carry_momentum(p, endpoint)))
        if callback is not None:
            callback(k, res)
    return traj
