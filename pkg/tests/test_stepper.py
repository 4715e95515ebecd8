import numpy as np
import pytest

from conftest import PEND_OMEGA0, RIGID_OMEGA0
from lie_svi import models, so3
from lie_svi.diagnostics import splitting_oracle
from lie_svi.spectral import build_tableau
from lie_svi.stepper import (
    IntegrationError,
    NonConvergenceError,
    SolverOptions,
    StageConfiguration,
    TransitionSingularity,
    boundary_momenta,
    carry_momentum,
    chart_momentum_to_body,
    chart_transition,
    chart_transition_inv,
    constant_velocity_guess,
    discrete_action,
    eval_curve,
    initialize_first_step,
    integrate,
    internal_residual,
    newton,
    step,
    transition_jacobian,
)


def random_stages(rng, n, scale=0.3):
    xis = rng.normal(size=(n + 1, 3)) * scale
    xis[0] = 0.0
    return StageConfiguration(so3.cay(rng.normal(size=3)), xis)


def fd_stage_gradient(model, tab, stages, eps=1e-6):
    g = np.zeros_like(stages.xis)
    for i in range(stages.n + 1):
        for k in range(3):
            a, b = stages.xis.copy(), stages.xis.copy()
            a[i, k] += eps
            b[i, k] -= eps
            g[i, k] = (discrete_action(model, tab, StageConfiguration(stages.base, a))
                       - discrete_action(model, tab, StageConfiguration(stages.base, b))) / (2 * eps)
    return g


def fd_moving_base(model, tab, stages, eps=1e-6):
    """Derivative of the action when the base moves and the other curve points stay put."""
    def moved(d):
        xis = np.vstack([np.zeros(3)] + [chart_transition_inv(d, x) for x in stages.xis[1:]])
        return discrete_action(model, tab, StageConfiguration(stages.base @ so3.cay(d), xis))
    return np.array([(moved(eps * e) - moved(-eps * e)) / (2 * eps) for e in np.eye(3)])


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


# -- chart transitions --------------------------------------------------------

def test_chart_transition_group_law(rng):
    for _ in range(100):
        a, b = rng.normal(size=3) * 0.7, rng.normal(size=3) * 0.7
        lam = chart_transition(a, b)
        assert np.max(np.abs(so3.cay(lam) - so3.cay(a) @ so3.cay(b))) <= 1e-12


def test_chart_transition_inverse_and_jacobian(rng):
    for _ in range(30):
        x0, xi = rng.normal(size=3) * 0.6, rng.normal(size=3) * 0.6
        lam = chart_transition_inv(x0, xi)
        assert np.allclose(so3.cay(x0) @ so3.cay(lam), so3.cay(xi), atol=1e-13)
        assert np.allclose(chart_transition(x0, lam), xi, atol=1e-12)
        eps = 1e-6
        fd = np.column_stack([(chart_transition_inv(x0, xi + eps * e)
                               - chart_transition_inv(x0, xi - eps * e)) / (2 * eps) for e in np.eye(3)])
        assert rel_err(transition_jacobian(x0, xi), fd) < 1e-6


def test_transition_singularity():
    with pytest.raises(TransitionSingularity):
        chart_transition([1.0, 0.0, 0.0], [1.0, 0.0, 0.0])


def test_carry_momentum_is_the_cotangent_pullback(rng):
    x = rng.normal(size=3) * 0.5
    d2 = rng.normal(size=3)
    p = carry_momentum(d2, x)

    def old_coords(lam):
        return so3.cay_inv(so3.cay(x) @ so3.cay(lam))
    eps = 1e-6
    Dphi = np.column_stack([(old_coords(eps * e) - old_coords(-eps * e)) / (2 * eps) for e in np.eye(3)])
    assert np.allclose(p, Dphi.T @ d2, atol=1e-8)


# -- residuals ---------------------------------------------------------------------

@pytest.mark.parametrize("which", ["rigid", "pend"])
def test_residuals_match_finite_difference_gradient(which, rng):
    model = models.rigid_body() if which == "rigid" else models.pendulum()
    tab = build_tableau(5, 0.6)
    for _ in range(10):
        stages = random_stages(rng, 5)
        fd = fd_stage_gradient(model, tab, stages)
        assert rel_err(internal_residual(model, tab, stages), fd[1:-1].ravel()) < 1e-6
        d1, d2 = boundary_momenta(model, tab, stages, boundary="fixed-chart")
        assert rel_err(d1, fd[0]) < 1e-6 and rel_err(d2, fd[-1]) < 1e-6
        d1, _ = boundary_momenta(model, tab, stages)
        assert rel_err(d1, fd_moving_base(model, tab, stages)) < 1e-6


def test_boundary_momenta_in_previous_chart(rng, pend):
    tab = build_tableau(4, 0.5)
    stages = random_stages(rng, 4)
    prev = rng.normal(size=3) * 0.4
    d1, _ = boundary_momenta(pend, tab, stages, prev_endpoint=prev)
    d1_here, _ = boundary_momenta(pend, tab, stages)
    assert np.allclose(d1, d1_here @ transition_jacobian(prev, prev))
    with pytest.raises(ValueError):
        boundary_momenta(pend, tab, stages, boundary="sideways")


def test_stage_count_mismatch(rigid, rng):
    with pytest.raises(ValueError):
        discrete_action(rigid, build_tableau(4, 0.5), random_stages(rng, 5))


# -- one step ---------------------------------------------------------------------

def test_step_at_rest_is_fixed_point(rigid):
    tab = build_tableau(6, 0.5)
    res = step(rigid, tab, np.zeros(3), np.eye(3))
    assert np.array_equal(res.stages.xis, np.zeros((7, 3)))
    assert np.array_equal(res.next, np.eye(3))
    assert res.iterations == 0


def test_one_step_matches_splitting_reference(rigid):
    tab = build_tableau(8, 0.5)
    p0 = initialize_first_step(rigid, np.eye(3), RIGID_OMEGA0)
    res = step(rigid, tab, p0, np.eye(3), constant_velocity_guess(tab, RIGID_OMEGA0))
    ref = splitting_oracle(rigid, np.eye(3), RIGID_OMEGA0, 1e-5, 50_000, 50_000)
    assert so3.group_error(res.next, ref.rotations[-1]) < 1e-6


def test_newton_converges_quadratically(pend):
    tab = build_tableau(8, 1.0)
    p0 = initialize_first_step(pend, np.eye(3), PEND_OMEGA0)
    res = step(pend, tab, p0, np.eye(3), opts=SolverOptions(initial_guess_mode="zero"))
    r = np.array(res.residual_history)
    assert res.iterations >= 3
    tail = r[r > 1e-13]
    ratios = tail[1:] / tail[:-1] ** 2
    assert np.all(ratios[-2:] < 10.0)


def test_momentum_matching_holds_after_solve(pend):
    h, n = 0.8, 6
    tab = build_tableau(n, h)
    opts = SolverOptions()
    p = initialize_first_step(pend, np.eye(3), PEND_OMEGA0)
    base, endpoint = np.eye(3), None
    for _ in range(5):
        res = step(pend, tab, p, base, constant_velocity_guess(tab, PEND_OMEGA0), opts, endpoint)
        d1, _ = boundary_momenta(pend, tab, res.stages, endpoint)
        assert np.max(np.abs(p + d1)) <= opts.residual_tol
        assert np.array_equal(res.boundary_momentum_minus, d1)
        p, base, endpoint = res.boundary_momentum_plus, res.next, res.stages.xis[-1]


def test_argmin_invariant_under_lagrangian_scaling(pend):
    tab = build_tableau(6, 0.9)
    p0 = initialize_first_step(pend, np.eye(3), PEND_OMEGA0)
    a = step(pend, tab, p0, np.eye(3))
    scaled = pend.scaled(7.3)
    b = step(scaled, tab, 7.3 * p0, np.eye(3))
    assert np.max(np.abs(a.stages.xis - b.stages.xis)) < 1e-12


def test_guess_validation(rigid):
    tab = build_tableau(4, 0.5)
    with pytest.raises(ValueError):
        step(rigid, tab, np.zeros(3), np.eye(3), guess=np.zeros((3, 3)))
    bad = np.ones((5, 3))
    with pytest.raises(ValueError):
        step(rigid, tab, np.zeros(3), np.eye(3), guess=bad)


def test_solver_option_validation():
    with pytest.raises(ValueError):
        SolverOptions(residual_tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(max_iters=0)
    with pytest.raises(ValueError):
        SolverOptions(initial_guess_mode="psychic")
    with pytest.raises(ValueError):
        SolverOptions(boundary="nowhere")
    with pytest.raises(ValueError):
        SolverOptions(polish_steps=-1)


def test_polish_drives_residual_below_tolerance(pend):
    tab = build_tableau(8, 1.0)
    p0 = initialize_first_step(pend, np.eye(3), PEND_OMEGA0)
    plain = step(pend, tab, p0, np.eye(3), opts=SolverOptions(polish_steps=0))
    polished = step(pend, tab, p0, np.eye(3), opts=SolverOptions(polish_steps=2))
    assert polished.residual <= plain.residual <= 1e-12
    assert polished.iterations >= plain.iterations


def test_newton_reports_nonconvergence():
    with pytest.raises(NonConvergenceError) as info:
        newton(lambda x: x**2 + 1.0, np.array([0.3]), SolverOptions(max_iters=3))
    assert info.value.residual >= 1.0


# -- start-up and curves ---------------------------------------------------------

def test_initialize_first_step(rigid):
    assert np.array_equal(initialize_first_step(rigid, np.eye(3), np.zeros(3)), np.zeros(3))
    a = initialize_first_step(rigid, np.eye(3), RIGID_OMEGA0)
    b = initialize_first_step(rigid, np.eye(3), 2.5 * RIGID_OMEGA0)
    assert np.allclose(b, 2.5 * a, rtol=1e-14)
    assert np.allclose(chart_momentum_to_body(a), rigid.inertia.I * RIGID_OMEGA0, rtol=1e-14)


def test_startup_consistent_with_reference_over_unit_time(rigid):
    tr = integrate(rigid, np.eye(3), RIGID_OMEGA0, 0.25, 6, 4)
    ref = splitting_oracle(rigid, np.eye(3), RIGID_OMEGA0, 1e-5, 100_000, 25_000)
    errs = [so3.group_error(a, b) for a, b in zip(tr.rotations, ref.rotations)]
    assert max(errs) < 1e-5


def test_eval_curve_endpoints_and_orthogonality(pend):
    tr = integrate(pend, np.eye(3), PEND_OMEGA0, 1.0, 7, 2)
    tab = tr.tableau
    for res, base in zip(tr.results, tr.rotations):
        R0, _ = eval_curve(res, tab, 0.0)
        assert np.array_equal(R0, base)
        Rh, _ = eval_curve(res, tab, 1.0)
        assert np.array_equal(Rh, res.next)
        assert np.array_equal(res.next, res.stages.base @ so3.cay(res.stages.xis[-1]))
        for t in np.linspace(0, 1.0, 50):
            R, _ = eval_curve(res, tab, t)
            assert so3.orthogonality_defect(R) <= 1e-12
    with pytest.raises(ValueError):
        eval_curve(tr.results[0], tab, 1.5)
    with pytest.raises(ValueError):
        eval_curve(tr.results[0], tab, -0.1)


def test_curve_velocity_matches_start_velocity(rigid):
    tr = integrate(rigid, np.eye(3), RIGID_OMEGA0, 0.5, 10, 1)
    _, W = eval_curve(tr.results[0], tr.tableau, 0.0)
    assert np.allclose(W, RIGID_OMEGA0, atol=1e-6)


# -- trajectories ------------------------------------------------------------------

def test_zero_velocity_stays_put(rigid):
    R0 = so3.cay([0.2, -0.1, 0.4])
    tr = integrate(rigid, R0, np.zeros(3), 0.5, 6, 10)
    assert all(np.array_equal(R, R0) for R in tr.rotations)


def test_isotropic_body_rotates_uniformly():
    model = models.rigid_body(jd=(1.0, 1.0, 1.0))
    W = np.array([0.4, -1.1, 0.7])
    from scipy.spatial.transform import Rotation

    # the chart curve is tan-shaped, so the error falls geometrically in n
    errs = []
    for n in (4, 6, 8):
        tr = integrate(model, np.eye(3), W, 0.5, n, 6)
        errs.append(max(so3.group_error(R, Rotation.from_rotvec(W * t).as_matrix())
                        for t, R in zip(tr.times, tr.rotations)))
    assert errs[0] > 1e3 * errs[1] and errs[2] < 1e-13


def test_reversal_retraces_rotations(pend):
    h, n = 0.5, 12
    fwd = integrate(pend, np.eye(3), PEND_OMEGA0, h, n, 5)
    # restart at the final point with the negated chart momentum
    p_end = -2.0 * fwd.momenta[-1]
    back = integrate(pend, fwd.rotations[-1], None, h, n, 5, momentum0=-p_end)
    for Rb, Rf in zip(back.rotations, reversed(fwd.rotations)):
        assert so3.group_error(Rb, Rf) < 1e-8


def test_integrate_chains_momenta(pend):
    tr = integrate(pend, np.eye(3), PEND_OMEGA0, 0.7, 5, 4)
    assert len(tr.results) == 4 and len(tr.rotations) == 5
    for a, b in zip(tr.results, tr.results[1:]):
        assert np.array_equal(b.stages.base, a.next)
    with pytest.raises(ValueError):
        integrate(pend, np.eye(3), PEND_OMEGA0, 0.7, 5, 0)


def test_integration_error_carries_step_index(rigid):
    with pytest.raises(IntegrationError) as info:
        integrate(rigid, np.eye(3), RIGID_OMEGA0, 0.5, 8, 3, SolverOptions(max_iters=1))
    assert info.value.step_index == 0
    assert isinstance(info.value.cause, NonConvergenceError)


def test_callback_sees_every_step(rigid):
    seen = []
    integrate(rigid, np.eye(3), RIGID_OMEGA0, 0.5, 4, 3, callback=lambda k, r: seen.append(k))
    assert seen == [0, 1, 2]


def test_vertical_momentum_is_a_discrete_invariant(pend):
    """Rotations about the vertical axis are a symmetry; its momentum map is conserved."""
    tr = integrate(pend, np.eye(3), PEND_OMEGA0, 1.5, 8, 60)
    Lz = np.array([R[2] @ y for R, y in zip(tr.rotations, tr.momenta)])
    assert np.max(np.abs(Lz - Lz[0])) < 1e-10


def test_fixed_chart_boundary_also_converges(rigid):
    opts = SolverOptions(boundary="fixed-chart")
    tr = integrate(rigid, np.eye(3), RIGID_OMEGA0, 0.5, 8, 4, opts)
    ref = splitting_oracle(rigid, np.eye(3), RIGID_OMEGA0, 1e-5, 200_000, 50_000)
    assert max(so3.group_error(a, b) for a, b in zip(tr.rotations, ref.rotations)) < 1e-7


def test_dense_output_shape(rigid):
    tr = integrate(rigid, np.eye(3), RIGID_OMEGA0, 0.5, 6, 3)
    ts, Rs, Ws = tr.dense(4)
    assert len(ts) == 13 and Rs.shape == (13, 3, 3) and Ws.shape == (13, 3)
    assert np.allclose(np.diff(ts), 0.125)
    assert np.array_equal(Rs[-1], tr.rotations[-1])


# -- worked examples -------------------------------------------------------------

def test_action_examples(rigid):
    tab = build_tableau(4, 0.5)
    zero = StageConfiguration(np.eye(3), np.zeros((5, 3)))
    assert discrete_action(rigid, tab, zero) == 0.0
    pend = models.pendulum(mass=1.0, gravity=1.0)
    assert discrete_action(pend, tab, zero) == pytest.approx(0.5, rel=1e-14)
    assert np.array_equal(internal_residual(rigid, tab, zero), np.zeros(9))
    d1, d2 = boundary_momenta(rigid, tab, zero)
    assert np.array_equal(d1 + d2, np.zeros(3))


def test_action_quadrature_against_dense_rule(rigid, rng):
    """n+1 points integrate the quadratic leading part exactly; the rational remainder is O(|xi|^2)."""
    tab, dense, fine = build_tableau(3, 0.5), build_tableau(3, 0.5, m=40), build_tableau(3, 0.5, m=24)
    for scale, bound in ((0.1, 5e-2), (0.01, 5e-4), (0.001, 5e-6)):
        for _ in range(10):
            stages = random_stages(rng, 3, scale)
            exact = discrete_action(rigid, dense, stages)
            assert abs(discrete_action(rigid, tab, stages) - exact) <= bound * abs(exact)
            assert abs(discrete_action(rigid, fine, stages) - exact) <= 1e-10 * abs(exact)


def test_residual_scales_with_lagrangian(pend, rng):
    tab = build_tableau(5, 0.6)
    stages = random_stages(rng, 5)
    r = internal_residual(pend, tab, stages)
    assert np.allclose(internal_residual(pend.scaled(3.0), tab, stages), 3.0 * r, rtol=1e-13)


def test_transition_identity_cases(rng, pend):
    lam = rng.normal(size=3)
    assert np.allclose(chart_transition_inv(np.zeros(3), lam), lam, atol=1e-15)
    assert np.allclose(transition_jacobian(np.zeros(3), lam), np.eye(3), atol=1e-15)
    for _ in range(200):
        a, b = rng.normal(size=(2, 3))
        a *= 0.9 * rng.uniform() / np.linalg.norm(a)
        b *= 0.9 * rng.uniform() / np.linalg.norm(b)
        assert abs(np.linalg.det(transition_jacobian(a, b))) > 1e-6
    # with the previous endpoint at the origin the chain rule is the identity
    tab = build_tableau(4, 0.5)
    stages = random_stages(rng, 4)
    d1, _ = boundary_momenta(pend, tab, stages, prev_endpoint=np.zeros(3), boundary="fixed-chart")
    assert rel_err(d1, fd_stage_gradient(pend, tab, stages)[0]) < 1e-6
