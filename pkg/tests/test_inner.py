import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bipen import (
    ConfigError,
    ConvergenceError,
    DivergenceError,
    InnerConfig,
    NumericError,
    StochasticOracle,
    descend_single,
    get_problem,
    inner_descend,
    probe_penalty_divergence,
)


def test_config_validation():
    with pytest.raises(ConfigError):
        InnerConfig(tau=0.0, K=3)
    with pytest.raises(ConfigError):
        InnerConfig(tau=0.1, K=-1)
    with pytest.raises(ConfigError):
        InnerConfig(tau=0.1, K=3, batch=-2)
    with pytest.raises(ConfigError):
        InnerConfig(tau=0.1, K=3, stop_grad_norm=0.0)
    InnerConfig(tau=0.1, K=0)  # zero steps allowed: a no-op descent


def test_zero_steps_returns_inputs_unchanged(kernel):
    y0, z0 = np.array([0.7, -0.3]), np.array([0.2, 0.9])
    res = inner_descend(kernel.problem, [0.1], y0, z0, 0.5, InnerConfig(tau=0.5, K=0))
    assert np.array_equal(res.y, y0) and np.array_equal(res.z, z0)
    assert res.oracle_calls == 0 and res.steps == 0
    assert np.isnan(res.grad_norm_y) and np.isnan(res.grad_norm_z)


def test_kernel_inner_iterates_follow_closed_form(kernel):
    # On the kernel instance both sequences are scalar linear recursions:
    #   z1 - x           contracts by (1 - tau)        per step,
    #   y1 - (x+s)/(1+s) contracts by (1 - tau (1+s))  per step,
    # and the second coordinates never move.
    x, s = 0.4, 0.5
    tau = 1.0 / (s * 1.0 + 1.0)
    y0, z0 = np.array([1.9, 0.7]), np.array([-0.8, -0.2])
    for K in (1, 3, 10):
        res = inner_descend(kernel.problem, [x], y0, z0, s, InnerConfig(tau=tau, K=K))
        z_exp = x + (1 - tau) ** K * (z0[0] - x)
        c = (x + s) / (1 + s)
        y_exp = c + (1 - tau * (1 + s)) ** K * (y0[0] - c)
        assert res.z[0] == pytest.approx(z_exp, abs=1e-13)
        assert res.y[0] == pytest.approx(y_exp, abs=1e-13)
        assert res.y[1] == y0[1] and res.z[1] == z0[1]
        assert res.steps == K and res.oracle_calls == 2 * K


def test_pl_contraction_envelope():
    # dist^2 after K exact steps at tau = 1/L_g obeys the PL envelope
    #   dist_K^2 <= (1 - mu/L_g)^K (L_g/mu) dist_0^2   (+ tiny slack),
    # on both the strongly convex and the nonconvex-PL lower level.
    for name in ("quadratic_sc", "sin_sq_pl"):
        suite = get_problem(name)
        prob = suite.problem
        c = prob.constants
        x = np.array([0.3])
        y0 = np.array([1.7, -0.9][: prob.dim_y])
        d0 = float(np.linalg.norm(y0 - suite.project_y_star(x, y0, 0.0)) ** 2)
        for K in (1, 5, 25):
            yK, _, _ = descend_single(lambda v: prob.grad_g_y(x, v), y0,
                                      1.0 / c.L_g, tol=0.0, exact_steps=K)
            dK = float(np.linalg.norm(yK - suite.project_y_star(x, yK, 0.0)) ** 2)
            bound = (1 - c.mu / c.L_g) ** K * (c.L_g / c.mu) * d0
            assert dK <= bound + 1e-12, (name, K)


def test_oracle_call_accounting_with_batches():
    s = get_problem("kernel_pl_noisy")
    oracle = StochasticOracle(s.problem, 0.1, 0.1, rng_seed=0)
    res = inner_descend(s.problem, [0.1], [0.5, 0.0], [0.5, 0.0], 0.2,
                        InnerConfig(tau=0.5, K=4, batch=3), oracle=oracle)
    assert res.oracle_calls == 2 * 4 * 3
    assert oracle.counter == 4 * 3 * 3  # three raw draws per step, batch 3


def test_batch_requires_oracle(kernel):
    with pytest.raises(ConfigError):
        inner_descend(kernel.problem, [0.1], [0.5, 0.0], [0.5, 0.0], 0.2,
                      InnerConfig(tau=0.5, K=2, batch=2))


def test_early_stop_counts_the_stopping_evaluation(kernel):
    res = inner_descend(kernel.problem, [0.1], [0.5, 0.0], [0.5, 0.0], 0.2,
                        InnerConfig(tau=0.5, K=50, stop_grad_norm=1e3))
    assert res.steps == 0 and res.oracle_calls == 2
    assert res.grad_norm_y <= 1e3 and res.grad_norm_z <= 1e3


def test_record_path_lengths(kernel):
    res = inner_descend(kernel.problem, [0.1], [0.9, 0.0], [0.9, 0.0], 0.2,
                        InnerConfig(tau=0.5, K=7), record_path=True)
    assert len(res.y_path) == 8 and len(res.z_path) == 8
    assert np.array_equal(res.y_path[-1], res.y)


def test_descend_single_exact_quadratic():
    # (y-2)^2/2 with tau = 1/curvature lands on the minimizer in one step
    y, gnorm, steps = descend_single(lambda v: v - 2.0, np.array([10.0]),
                                     1.0, tol=1e-14)
    assert y[0] == 2.0 and gnorm == 0.0 and steps == 1


def test_descend_single_convergence_error_carries_residual():
    with pytest.raises(ConvergenceError) as err:
        descend_single(lambda v: v, np.array([1.0]), 1e-3, tol=1e-12, max_iter=5)
    assert err.value.residual is not None and err.value.residual > 0


def test_descend_single_divergence_and_nan_guards():
    with pytest.raises(DivergenceError) as err:
        descend_single(lambda v: -v, np.array([1.0]), 1.0, tol=1e-12,
                       max_iter=10_000, radius=100.0, label="runaway")
    assert err.value.norm > 100.0 and err.value.step is not None
    with pytest.raises(NumericError):
        descend_single(lambda v: np.array([np.nan]), np.array([1.0]), 1.0,
                       tol=1e-12, max_iter=10)


def test_inner_divergence_guard_names_the_sequence():
    s = get_problem("degenerate_penalty")
    with pytest.raises(DivergenceError) as err:
        inner_descend(s.problem, [1.0], [0.0, 1.0], [0.0, 1.0], 0.1,
                      InnerConfig(tau=0.9, K=100_000, divergence_radius=3.0))
    assert err.value.sequence == "y"  # only the penalty sequence drifts


def test_divergence_probe_detects_runaway_and_spares_benign():
    s = get_problem("degenerate_penalty")
    probe = probe_penalty_divergence(s.problem, [1.0], 0.05)
    assert probe.diverged and probe.steps <= 1000
    k = get_problem("kernel_pl")
    probe = probe_penalty_divergence(k.problem, [0.5], 0.5)
    assert not probe.diverged


@settings(max_examples=40, deadline=None)
@given(
    x=st.floats(0.0, 2.0),
    z0=st.floats(-5.0, 5.0),
    sigma=st.floats(0.01, 1.0),
    K=st.integers(1, 12),
)
def test_lower_level_gap_never_expands(x, z0, sigma, K):
    # property: at tau = 1/(sigma L_f + L_g) <= 1/L_g the distance of the
    # lower-level sequence to its solution set is non-increasing
    prob = get_problem("kernel_pl").problem
    tau = 1.0 / (sigma * 1.0 + 1.0)
    res = inner_descend(prob, [x], [z0, 0.0], [z0, 0.0], sigma,
                        InnerConfig(tau=tau, K=K))
    assert abs(res.z[0] - x) <= abs(z0 - x) + 1e-12
