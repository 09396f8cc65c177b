import math

import numpy as np
import pytest

from bipen import ConfigError, get_problem, list_problems
from bipen.problems import (
    HardInstanceSpec,
    certify_sin_sq_mu,
    chain_min_eigenvalue,
    make_hard_instance,
    psi,
    psi_envelopes,
    psi_prime,
    zero_chain_hessian,
    zero_chain_value_grad,
)
from bipen.rng import substream

from conftest import central_fd_grad

ALL_NAMES = (
    "quadratic_sc", "kernel_pl", "kernel_pl_fnoise", "kernel_pl_gnoise",
    "kernel_pl_noisy", "sin_sq_pl", "discontinuous", "discontinuous_smoothed",
    "degenerate_penalty", "degenerate_penalty_boxed", "hard_instance",
)


def test_registry_contents():
    assert tuple(list_problems()) == ALL_NAMES
    with pytest.raises(ConfigError) as err:
        get_problem("no_such_problem")
    assert "quadratic_sc" in str(err.value)


@pytest.mark.parametrize("name", ALL_NAMES)
def test_declared_gradients_match_finite_differences(name):
    # Central differences of the declared objectives are the ground truth for
    # every gradient callable in the registry.
    suite = get_problem(name)
    prob = suite.problem
    meta = prob.meta
    rng = substream(101, "fd", name)
    for _ in range(12):
        x = rng.uniform(*meta.x_window, size=prob.dim_x)
        y = rng.uniform(*meta.y_window, size=prob.dim_y)
        for fn, gx, gy in ((prob.f, prob.grad_f_x, prob.grad_f_y),
                           (prob.g, prob.grad_g_x, prob.grad_g_y)):
            fd_x = central_fd_grad(lambda v: fn(v, y), x)
            fd_y = central_fd_grad(lambda v: fn(x, v), y)
            assert np.allclose(fd_x, gx(x, y), atol=5e-6), (name, "x-grad", x, y)
            assert np.allclose(fd_y, gy(x, y), atol=5e-6), (name, "y-grad", x, y)


@pytest.mark.parametrize("name", ("quadratic_sc", "kernel_pl", "sin_sq_pl",
                                  "discontinuous_smoothed", "degenerate_penalty"))
def test_declared_hessians_match_finite_differences(name):
    suite = get_problem(name)
    prob = suite.problem
    meta = prob.meta
    rng = substream(102, "fd-hess", name)
    for _ in range(6):
        x = rng.uniform(*meta.x_window, size=prob.dim_x)
        y = rng.uniform(*meta.y_window, size=prob.dim_y)
        fd_yy = np.column_stack([
            central_fd_grad(lambda v: float(prob.grad_g_y(x, v)[i]), y)
            for i in range(prob.dim_y)
        ]).T
        assert np.allclose(fd_yy, prob.hess_g_yy(x, y), atol=5e-5)
        fd_xy = np.array([
            central_fd_grad(lambda v: float(prob.grad_g_x(v, y)[i]), x)
            for i in range(prob.dim_x)
        ])
        # hess_g_xy rows are d(grad_x g)/dy
        fd_xy2 = np.array([
            central_fd_grad(lambda v: float(prob.grad_g_x(x, v)[i]), y)
            for i in range(prob.dim_x)
        ])
        assert np.allclose(fd_xy2, prob.hess_g_xy(x, y), atol=5e-5)
        del fd_xy


def test_kernel_penalized_facts(kernel):
    # phi_sigma(0; 1/4) = 1/(2*1.25) = 0.4 and d/dx phi_sigma(0; 1/4) = -0.8
    assert kernel.phi_sigma(0.0, 0.25) == pytest.approx(0.4, abs=1e-15)
    assert kernel.grad_phi_sigma(0.0, 0.25) == pytest.approx(-0.8, abs=1e-15)
    assert kernel.phi_inf == 0.0
    # projection lands on the penalized stationary line: grad_y h = 0 there
    prob = kernel.problem
    for x, s in ((0.2, 0.3), (1.5, 1.0)):
        y_star = kernel.project_y_star([x], [0.7, -2.0], s)
        gh = s * prob.grad_f_y([x], y_star) + prob.grad_g_y([x], y_star)
        assert np.allclose(gh, 0.0, atol=1e-15)
        assert y_star[1] == -2.0  # kernel coordinate untouched
    sampled = kernel.sample_y_star(0.4, 0.2, n=17)
    assert sampled.shape == (17, 2)
    assert np.allclose(sampled[:, 0], (0.4 + 0.2) / 1.2, atol=1e-15)


def test_quadratic_facts(quadratic):
    prob = quadratic.problem
    assert prob.analytic_phi([0.5]) == pytest.approx(0.25, abs=1e-15)  # = phi_inf
    assert quadratic.phi_inf == 0.25
    for x, s in ((0.3, 0.4), (-1.0, 1.7)):
        y_star = quadratic.project_y_star([x], None, s)
        gh = s * prob.grad_f_y([x], y_star) + prob.grad_g_y([x], y_star)
        assert np.allclose(gh, 0.0, atol=1e-15)


def test_sin_sq_certificate_and_nonconvexity(sin_sq):
    mu = sin_sq.problem.constants.mu
    assert 0.10 < mu < 0.20
    # a finer grid cannot undercut the 0.95-margin certificate
    assert certify_sin_sq_mu(n=8001, safety=1.0) >= mu
    # the lower level is genuinely nonconvex: curvature -4 at y - x = pi/2
    h = sin_sq.problem.hess_g_yy([0.0], [math.pi / 2])
    assert h[0, 0] == pytest.approx(-4.0, abs=1e-12)


def test_discontinuous_jump_in_closed_form():
    s = get_problem("discontinuous")
    phi = s.problem.analytic_phi
    assert phi([-1e-3]) - phi([1e-3]) == pytest.approx(1.0, abs=1e-5)
    assert phi([0.0]) == 0.0
    sm = get_problem("discontinuous_smoothed")
    assert sm.problem.analytic_phi([-1e-3]) == pytest.approx(1.0, abs=2e-3)
    assert sm.problem.analytic_phi([1e-3]) == pytest.approx(0.0, abs=2e-3)


def test_degenerate_variants():
    s = get_problem("degenerate_penalty")
    assert s.problem.meta.penalty_divergent
    b = get_problem("degenerate_penalty_boxed")
    assert b.phi_sigma(0.7, 0.5) == 0.0
    assert b.phi_sigma(-0.7, 0.5) == -0.7


# ---------------------------------------------------------------------------
# chain construction


def test_chain_value_and_gradient_at_zero():
    # value (0-1)^2/8 = 1/8; gradient supported on the first coordinate only,
    # with exact floating-point zeros elsewhere
    for q in (1, 2, 5, 64):
        val, grad = zero_chain_value_grad(q, np.zeros(q))
        assert val == 0.125
        assert grad[0] == -0.25
        assert all(v == 0.0 for v in grad[1:])


def test_chain_gradient_matches_finite_differences():
    rng = substream(7, "chain-fd")
    for q in (1, 2, 3, 9):
        z = rng.uniform(-2, 2, size=q)
        fd = central_fd_grad(lambda v: zero_chain_value_grad(q, v)[0], z)
        assert np.allclose(fd, zero_chain_value_grad(q, z)[1], atol=1e-6)


def test_chain_hessian_consistency():
    # the chain is quadratic: grad(z) = A z + grad(0) exactly
    rng = substream(8, "chain-hess")
    for q in (1, 2, 6):
        A = zero_chain_hessian(q)
        g0 = zero_chain_value_grad(q, np.zeros(q))[1]
        z = rng.uniform(-3, 3, size=q)
        assert np.allclose(zero_chain_value_grad(q, z)[1], A @ z + g0, atol=1e-12)
        assert np.allclose(A, A.T)


def test_chain_minimum_eigenvalue_closed_form():
    # dense eigensolve agrees with sin^2(pi / (2(2q+1))) for the fixed-free
    # tridiagonal chain; q=1 gives exactly 1/4
    assert chain_min_eigenvalue(1) == pytest.approx(0.25, abs=1e-14)
    for q in (2, 3, 10, 40):
        dense = float(np.linalg.eigvalsh(zero_chain_hessian(q))[0])
        formula = math.sin(math.pi / (2 * (2 * q + 1))) ** 2
        assert dense == pytest.approx(formula, abs=1e-12), q
    assert chain_min_eigenvalue(2) == pytest.approx(0.09549150281252627, abs=1e-12)


def test_bump_knot_values_and_exact_zeros():
    b = 0.125
    assert psi(0.0, b) == 0.0 and psi_prime(0.0, b) == 0.0  # bitwise
    assert psi(b, b) == pytest.approx(b * b / 2, abs=1e-16)
    assert psi(2 * b, b) == pytest.approx(b * b, rel=1e-12)
    assert psi(5 * b, b) == b * b  # constant branch, exact
    assert psi_prime(2.5 * b, b) == 0.0
    # continuity across both knots (quintic blend meets both quadratics)
    for t0 in (b, 2 * b):
        lo, hi = psi(t0 - 1e-9, b), psi(t0 + 1e-9, b)
        assert abs(hi - lo) < 1e-8
        dlo, dhi = psi_prime(t0 - 1e-9, b), psi_prime(t0 + 1e-9, b)
        assert abs(dhi - dlo) < 1e-6


def test_bump_symmetry_and_derivative():
    b = 0.2
    ts = np.linspace(-0.55, 0.55, 223)  # grid avoids the knots
    assert np.array_equal(psi(ts, b), psi(-ts, b))
    assert np.array_equal(psi_prime(ts, b), -psi_prime(-ts, b))
    for t in (-0.3, 0.05, 0.17, 0.33, 0.5):
        fd = (psi(t + 1e-7, b) - psi(t - 1e-7, b)) / 2e-7
        assert psi_prime(t, b) == pytest.approx(fd, abs=1e-6)


def test_bump_envelopes_are_in_expected_ranges():
    # ranges frozen from a direct enumeration of the quintic blend on [1, 2]
    env = psi_envelopes()
    assert 1.0 <= env["gamma0"] < 1.1
    assert 1.0 < env["gamma1"] < 1.1
    assert 1.5 < env["gamma2"] < 2.0
    assert 14.0 < env["gamma3"] < 16.0
    # the envelopes actually bound psi and psi' for an unrelated beta
    b = 0.37
    ts = np.linspace(-3 * b, 3 * b, 4001)
    assert float(psi(ts, b).max()) <= env["gamma0"] * b * b + 1e-15
    assert float(np.abs(psi_prime(ts, b)).max()) <= env["gamma1"] * b + 1e-15


def test_hard_instance_geometry():
    spec = HardInstanceSpec(T=3, K=4)
    assert spec.q == 24 and spec.beta == pytest.approx(1 / math.sqrt(24))
    with pytest.raises(ConfigError):
        HardInstanceSpec(T=0, K=5)
    s = make_hard_instance(spec)
    prob = s.problem
    q, b = spec.q, spec.beta
    y_star = np.full(q, b)
    # the chain's minimizer is the all-beta vector (zero gradient, exactly)
    assert np.all(prob.grad_g_y([0.0], y_star) == 0.0)
    assert prob.g([0.0], y_star) == 0.0
    # there the bump sum is q/2 * beta^2/2 = 1/4, so f = (x+1)^2 / 2 = phi
    for x in (-1.7, -0.5, 0.0):
        assert prob.f([x], y_star) == pytest.approx(0.5 * (x + 1) ** 2, rel=1e-12)
        assert prob.analytic_phi([x]) == pytest.approx(0.5 * (x + 1) ** 2)
    assert prob.g([0.0], np.zeros(q)) == pytest.approx(b * b * 0.125, rel=1e-14)


def test_hard_instance_upper_gradients_vanish_on_first_half():
    s = make_hard_instance(HardInstanceSpec(T=2, K=3))
    prob = s.problem
    q = prob.dim_y
    rng = substream(5, "hard-zeros")
    y = np.zeros(q)
    y[: q // 2] = rng.uniform(-1, 1, size=q // 2)
    assert np.all(prob.grad_f_y([0.0], y) == 0.0)  # bitwise
    assert prob.f([0.0], y) == 0.0
    assert np.all(prob.grad_f_x([0.0], y) == 0.0)


def test_hard_instance_gradient_bound_matches_declaration():
    s = make_hard_instance(HardInstanceSpec(T=2, K=4))
    prob = s.problem
    c = prob.constants
    meta = prob.meta
    rng = substream(6, "hard-cf")
    worst = 0.0
    for _ in range(200):
        x = rng.uniform(*meta.x_window, size=1)
        y = rng.uniform(*meta.y_window, size=prob.dim_y)
        worst = max(worst, float(np.linalg.norm(prob.grad_f_y(x, y))))
    assert worst <= c.C_f * (1 + 1e-12)
    assert c.mu == pytest.approx(chain_min_eigenvalue(prob.dim_y), abs=1e-15)
