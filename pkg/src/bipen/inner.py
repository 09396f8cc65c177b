"""Inner loops: simultaneous penalty/lower-level descent.

One outer iteration of the penalty methods runs, from warm starts,

    z_{k+1} = z_k - tau * grad_y g(x, z_k)                (lower level)
    y_{k+1} = y_k - tau * (sigma * grad_y f(x, y_k) + grad_y g(x, y_k))

for K steps.  Under the PL assumption both sequences contract linearly to
the solution sets of g(x, .) and h_sigma(x, .).  The module also provides a
single-sequence descent used for value-function evaluation and certified
pre-solves, and a bounded-budget probe that detects penalties whose descent
runs away (unbounded-below h_sigma).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import BilevelProblem, StochasticOracle, as_bilevel, as_vector
from .errors import ConfigError, ConvergenceError, DivergenceError, NumericError


@dataclass(frozen=True)
class InnerConfig:
    """Step size, step count and stopping policy for one inner phase.

    ``batch`` = 0 means full (deterministic) gradients; batch >= 1 draws that
    many noisy gradients per evaluation from the run's stochastic oracle.
    ``stop_grad_norm`` enables early exit once both sequences' gradient norms
    fall below it (disabled by default: worst-case budgets are run in full).
    """

    tau: float
    K: int
    batch: int = 0
    stop_grad_norm: Optional[float] = None
    divergence_radius: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ConfigError(f"inner step size tau must be > 0, got {self.tau}")
        if self.K < 0:
            raise ConfigError(f"inner step count K must be >= 0, got {self.K}")
        if self.batch < 0:
            raise ConfigError(f"batch must be >= 0 (0 = full gradients), got {self.batch}")
        if self.stop_grad_norm is not None and self.stop_grad_norm <= 0:
            raise ConfigError("stop_grad_norm must be positive when set")

    @classmethod
    def from_plan(cls, plan) -> "InnerConfig":
        """Inner configuration induced by a SchedulePlan (tau = 1/(sigma L_f + L_g))."""
        return cls(tau=plan.tau, K=plan.K, batch=plan.B)


class InnerResult(NamedTuple):
    y: np.ndarray
    z: np.ndarray
    grad_norm_y: float  # norm of the last h_sigma-gradient used (nan if no steps)
    grad_norm_z: float  # norm of the last g-gradient used (nan if no steps)
    oracle_calls: int   # 2 * max(batch, 1) per gradient evaluation (incl. a stopping one)
    steps: int
    y_path: Optional[list] = None
    z_path: Optional[list] = None


def _norm(v) -> float:
    return float(np.linalg.norm(v))


def _guard(vec, which: str, step: int, radius: float):
    if not np.all(np.isfinite(vec)):
        raise NumericError(
            f"non-finite {which}-iterate at inner step {step}", point=np.array(vec)
        )
    n = _norm(vec)
    if n > radius:
        raise DivergenceError(
            f"{which}-sequence left the divergence radius {radius:g} "
            f"at inner step {step} (norm {n:.3g})",
            step=step, norm=n, sequence=which,
        )


def inner_descend(
    problem,
    x,
    y0,
    z0,
    sigma: float,
    cfg: InnerConfig,
    oracle: Optional[StochasticOracle] = None,
    record_path: bool = False,
) -> InnerResult:
    """Run K simultaneous descent steps on h_sigma(x, .) and g(x, .).

    Deterministic when ``cfg.batch`` == 0; otherwise every gradient is a
    batch average drawn from ``oracle``.  Oracle calls are counted in fused
    penalty-gradient units: two first-order calls per step, scaled by the
    batch size in the stochastic path -- and the loop makes exactly that many
    calls.  The reported gradient norms are those of the last gradients the
    loop consumed (no extra post-loop evaluations: on budget-sized worst-case
    instances a single spare gradient call would leak information the
    certification harness must account for).
    """
    prob = as_bilevel(problem)
    x = as_vector(x, prob.dim_x, "x")
    y = as_vector(y0, prob.dim_y, "y0").copy()
    z = as_vector(z0, prob.dim_y, "z0").copy()
    if not (np.isfinite(sigma) and sigma > 0):
        raise ConfigError(f"inner descent needs sigma > 0, got {sigma}")
    if cfg.batch > 0 and oracle is None:
        raise ConfigError("cfg.batch > 0 requires a stochastic oracle")

    radius = cfg.divergence_radius
    if radius is None:
        radius = 1e6 * (1.0 + max(_norm(y), _norm(z)))

    if cfg.batch == 0:
        def grad_g(v):
            return prob.grad_g_y(x, v)

        def grad_h(v):
            return sigma * prob.grad_f_y(x, v) + prob.grad_g_y(x, v)
    else:
        def grad_g(v):
            return oracle.draw("g_y", x, v, cfg.batch)

        def grad_h(v):
            return (sigma * oracle.draw("f_y", x, v, cfg.batch)
                    + oracle.draw("g_y", x, v, cfg.batch))

    y_path = [y.copy()] if record_path else None
    z_path = [z.copy()] if record_path else None

    batch_eff = max(cfg.batch, 1)
    steps = 0
    calls = 0  # fused units: one h_sigma-gradient + one g-gradient per step
    ny = nz = float("nan")
    for k in range(cfg.K):
        gz = grad_g(z)
        gy = grad_h(y)
        calls += 2 * batch_eff
        ny, nz = _norm(gy), _norm(gz)
        if cfg.stop_grad_norm is not None \
                and ny <= cfg.stop_grad_norm and nz <= cfg.stop_grad_norm:
            break
        z = z - cfg.tau * gz
        y = y - cfg.tau * gy
        _guard(z, "z", k, radius)
        _guard(y, "y", k, radius)
        steps += 1
        if record_path:
            y_path.append(y.copy())
            z_path.append(z.copy())

    return InnerResult(y, z, ny, nz, calls, steps, y_path, z_path)


def descend_single(
    grad_fn,
    y0,
    tau: float,
    tol: float,
    max_iter: int = 500_000,
    radius: Optional[float] = None,
    label: str = "descent",
    exact_steps: Optional[int] = None,
):
    """Plain gradient descent on a single smooth function of y.

    Stops when ||grad|| <= tol (or after exactly ``exact_steps`` steps when
    given).  Raises ConvergenceError if the tolerance is not met within
    ``max_iter`` and DivergenceError/NumericError on runaway or non-finite
    iterates.  Returns (y, final_grad_norm, steps).
    """
    y = np.array(y0, dtype=float).copy()
    if radius is None:
        radius = 1e6 * (1.0 + _norm(y))
    if exact_steps is not None:
        for k in range(exact_steps):
            y = y - tau * np.asarray(grad_fn(y))
            _guard(y, label, k, radius)
        return y, _norm(grad_fn(y)), exact_steps
    for k in range(max_iter):
        gv = np.asarray(grad_fn(y))
        n = _norm(gv)
        if not np.isfinite(n):
            raise NumericError(f"non-finite gradient in {label}", point=y.copy())
        if n <= tol:
            return y, n, k
        y = y - tau * gv
        _guard(y, label, k, radius)
    raise ConvergenceError(
        f"{label} failed to reach tolerance {tol:g} within {max_iter} steps "
        f"(residual {_norm(grad_fn(y)):.3g})",
        residual=_norm(grad_fn(y)),
    )


class DivergenceProbe(NamedTuple):
    diverged: bool
    steps: int
    final_norm: float
    radius: float


def probe_penalty_divergence(
    problem,
    x,
    sigma: float,
    max_steps: int = 1000,
    radius: Optional[float] = None,
    y0=None,
) -> DivergenceProbe:
    """Bounded-budget detector for unbounded-below penalties.

    Runs gradient descent on h_sigma(x, .) from the problem's default start
    with a deliberately tight radius: a penalty that is unbounded below in a
    linear direction drifts out of it within the step budget, while benign
    instances stay put.  Returns the observation; callers decide whether to
    raise.
    """
    prob = as_bilevel(problem)
    x = as_vector(x, prob.dim_x, "x")
    if y0 is None:
        _, y0 = prob.default_start()
    y = as_vector(y0, prob.dim_y, "y0").copy()
    c = prob.constants
    if radius is None:
        meta = prob.meta
        radius = getattr(meta, "divergence_radius", None) if meta else None
    if radius is None:
        radius = 10.0 * (1.0 + _norm(y))
    tau = 1.0 / (sigma * c.L_f + c.L_g)
    for k in range(max_steps):
        gv = sigma * prob.grad_f_y(x, y) + prob.grad_g_y(x, y)
        y = y - tau * np.asarray(gv)
        n = _norm(y)
        if not np.isfinite(n):
            return DivergenceProbe(True, k + 1, float("inf"), radius)
        if n > radius:
            return DivergenceProbe(True, k + 1, n, radius)
    return DivergenceProbe(False, max_steps, _norm(y), radius)
