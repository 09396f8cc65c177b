"""Problem abstraction, penalty objective and hypergradient estimation.

The bilevel problem treated throughout the package is

    min_x  phi(x),    phi(x) = min_{y in Y*(x)} f(x, y),
                      Y*(x)  = argmin_y g(x, y),

where the lower level g(x, .) satisfies a Polyak-Lojasiewicz (PL) inequality
with constant mu, so Y*(x) may be a nontrivial set.  The package works with
the additive penalty h_sigma = sigma*f + g and the penalized hyper-objective

    phi_sigma(x) = min_y { f(x, y) + (g(x, y) - g*(x)) / sigma }
                 = (min_y h_sigma(x, y) - g*(x)) / sigma,

which is an O(sigma)-accurate smoothing of phi.  Its gradient is available
from first-order information alone: with yK an approximate minimizer of
h_sigma(x, .) and zK an approximate minimizer of g(x, .),

    grad_est = grad_x f(x, yK) + (grad_x g(x, yK) - grad_x g(x, zK)) / sigma.

This module owns the callable bundle describing a problem, its constants
record, the penalty objective, the stochastic gradient oracle, and the
estimator/evaluation operations built on them.  Iterative drivers live in
``inner`` and ``drivers``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import (
    CapabilityError,
    ConfigError,
    InputError,
    NumericError,
)
from .rng import substream

Array = np.ndarray
_FN = Callable[[Array, Array], float]
_GRAD = Callable[[Array, Array], Array]


# ---------------------------------------------------------------------------
# validation helpers


def as_vector(v, dim: int, name: str) -> Array:
    """Coerce ``v`` to a float64 vector of length ``dim`` or raise InputError."""
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise InputError(
            f"{name} must be a vector of length {dim}, got shape {arr.shape}"
        )
    return arr


def _require_finite(value, x: Array, y, what: str):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        pt = (np.array(x, copy=True), None if y is None else np.array(y, copy=True))
        raise NumericError(f"non-finite {what} encountered", point=pt)
    return arr


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class ProblemConstants:
    """Regularity constants a problem declares about itself.

    All Lipschitz-type constants are understood block-wise: ``L_f`` bounds the
    Lipschitz moduli of grad_x f and grad_y f in either argument (likewise
    ``L_g``, ``rho_f``, ``rho_g`` for gradients/Hessian blocks of g and the
    Hessians of f), and ``C_f`` bounds ||grad_y f|| on the problem's stated
    probe window.  ``mu`` is the PL constant of g(x, .); ``sigma_bar`` is the
    largest penalty weight the problem certifies; ``M_f``/``M_g`` bound the
    standard deviation of stochastic gradient noise (0 = deterministic).
    """

    C_f: float
    L_f: float
    L_g: float
    rho_f: float
    rho_g: float
    mu: float
    sigma_bar: float
    M_f: float = 0.0
    M_g: float = 0.0

    def __post_init__(self):
        for name in ("C_f", "L_f", "L_g", "rho_f", "rho_g", "M_f", "M_g"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"constant {name} must be finite and >= 0, got {v}")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ConfigError(f"constant mu must be finite and > 0, got {self.mu}")
        if not (np.isfinite(self.sigma_bar) and self.sigma_bar > 0):
            raise ConfigError(f"sigma_bar must be finite and > 0, got {self.sigma_bar}")

    @property
    def ell(self) -> float:
        """Aggregate smoothness scale max(C_f, L_f, L_g, rho_g)."""
        return max(self.C_f, self.L_f, self.L_g, self.rho_g)

    @property
    def kappa(self) -> float:
        """Condition-style ratio ell / mu."""
        return self.ell / self.mu

    @property
    def stochastic(self) -> bool:
        return self.M_f > 0 or self.M_g > 0


@dataclass(frozen=True)
class ProblemMeta:
    """Run-support metadata attached to a problem.

    ``x_window``/``y_window`` bound the region on which declared constants
    were taken and on which probes are sampled.  ``y_box`` (when set) is a
    hard per-coordinate box: value-function evaluations then use a grid
    minimizer over the box instead of unconstrained descent.
    """

    x0: tuple
    y0: tuple
    x_window: tuple  # (lo, hi), per-coordinate probe window for x
    y_window: tuple  # (lo, hi), per-coordinate probe window for y
    y_box: Optional[tuple] = None  # ((lo, hi), ...) one pair per y coordinate
    penalty_divergent: bool = False  # penalty descent runs away for some x
    penalty_refusal: Optional[str] = None  # reason to refuse penalty machinery
    divergence_radius: Optional[float] = None


@dataclass(frozen=True)
class BilevelProblem:
    """Callable bundle for one bilevel instance.

    All callables take ``(x, y)`` as float64 vectors of lengths ``dim_x`` and
    ``dim_y``.  Hessian blocks of g and the analytic hyper-objective are
    optional; they unlock the pseudoinverse/stationarity diagnostics and the
    analytic trace columns respectively.
    """

    dim_x: int
    dim_y: int
    f: _FN
    grad_f_x: _GRAD
    grad_f_y: _GRAD
    g: _FN
    grad_g_x: _GRAD
    grad_g_y: _GRAD
    constants: ProblemConstants
    hess_g_yy: Optional[Callable[[Array, Array], Array]] = None
    hess_g_xy: Optional[Callable[[Array, Array], Array]] = None  # dim_x x dim_y
    analytic_phi: Optional[Callable[[Array], float]] = None
    analytic_grad_phi: Optional[Callable[[Array], Array]] = None
    meta: Optional[ProblemMeta] = None

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_y < 1:
            raise ConfigError("dim_x and dim_y must be at least 1")

    def check_point(self, x, y=None):
        x = as_vector(x, self.dim_x, "x")
        if y is None:
            return x
        return x, as_vector(y, self.dim_y, "y")

    def default_start(self) -> tuple[Array, Array]:
        if self.meta is not None:
            return (
                np.array(self.meta.x0, dtype=float),
                np.array(self.meta.y0, dtype=float),
            )
        return np.zeros(self.dim_x), np.zeros(self.dim_y)


def as_bilevel(problem) -> BilevelProblem:
    """Accept either a BilevelProblem or a wrapper exposing ``.problem``."""
    inner = getattr(problem, "problem", None)
    return inner if isinstance(inner, BilevelProblem) else problem


# ---------------------------------------------------------------------------
# penalty objective


class PenaltyValue(NamedTuple):
    """phi_sigma(x) together with an a-posteriori accuracy certificate.

    ``error_bound`` converts the final inner gradient norms into a bound on
    the value error via PL quadratic growth: a residual r on an mu-PL
    function overestimates its minimum by at most r^2 / (2 mu).
    """

    value: float
    error_bound: float
    h_grad_norm: float
    g_grad_norm: float


@dataclass(frozen=True)
class PenaltyObjective:
    """The penalty h_sigma = sigma*f + g for one problem and one weight.

    Construction validates 0 < sigma <= sigma_bar and refuses problems whose
    penalty descent is known to run away (detected by a bounded-budget probe
    of gradient descent on h_sigma from the problem's default start).
    """

    problem: BilevelProblem
    sigma: float
    gstar_tolerance: float = 1e-12

    def __post_init__(self):
        prob = as_bilevel(self.problem)
        if prob is not self.problem:
            object.__setattr__(self, "problem", prob)
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"penalty weight sigma must be > 0, got {self.sigma}")
        if self.sigma > prob.constants.sigma_bar:
            raise ConfigError(
                f"sigma={self.sigma} exceeds the certified range "
                f"(0, {prob.constants.sigma_bar}]"
            )
        if not (np.isfinite(self.gstar_tolerance) and self.gstar_tolerance > 0):
            raise ConfigError("gstar_tolerance must be positive")
        meta = prob.meta
        if meta is not None and meta.penalty_refusal:
            raise CapabilityError(
                f"penalty formulation refused: {meta.penalty_refusal}"
            )
        if meta is not None and meta.penalty_divergent and meta.y_box is None:
            # The penalty is flagged as unbounded below; confirm dynamically so
            # the refusal reports observed divergence, not just a label.
            from .errors import DivergenceError
            from .inner import probe_penalty_divergence

            x0 = np.array(meta.x0, dtype=float)
            probe = probe_penalty_divergence(prob, x0, self.sigma)
            if probe.diverged:
                raise DivergenceError(
                    "penalty objective is unbounded below: descent on h_sigma "
                    f"left radius {probe.radius:g} after {probe.steps} steps; "
                    "refusing construction",
                    step=probe.steps, norm=probe.final_norm, sequence="y",
                )
            from .errors import ConvergenceError

            raise ConvergenceError(
                "penalty objective is unbounded below for this problem "
                "(flagged degenerate); refusing construction"
            )


def penalty_value_grad_y(p: PenaltyObjective, x, y) -> tuple[float, Array]:
    """Value and y-gradient of h_sigma at (x, y).

    Performs exactly one evaluation of each underlying oracle
    (f, g, grad_y f, grad_y g).
    """
    prob = p.problem
    x, y = prob.check_point(x, y)
    fv = float(_require_finite(prob.f(x, y), x, y, "f value"))
    gv = float(_require_finite(prob.g(x, y), x, y, "g value"))
    gfy = _require_finite(prob.grad_f_y(x, y), x, y, "grad_y f")
    ggy = _require_finite(prob.grad_g_y(x, y), x, y, "grad_y g")
    return p.sigma * fv + gv, p.sigma * gfy + ggy


def hypergradient_estimate(p: PenaltyObjective, x, yK, zK) -> Array:
    """First-order hypergradient estimate from the two inner outputs.

    ``yK`` approximately minimizes h_sigma(x, .), ``zK`` approximately
    minimizes g(x, .).  Costs three x-gradient oracle calls.
    """
    prob = p.problem
    if not (np.isfinite(p.sigma) and p.sigma > 0):
        raise ConfigError("hypergradient estimate needs sigma > 0")
    x, yK = prob.check_point(x, yK)
    zK = as_vector(zK, prob.dim_y, "zK")
    gfx = _require_finite(prob.grad_f_x(x, yK), x, yK, "grad_x f")
    ggx_y = _require_finite(prob.grad_g_x(x, yK), x, yK, "grad_x g at yK")
    ggx_z = _require_finite(prob.grad_g_x(x, zK), x, zK, "grad_x g at zK")
    return gfx + (ggx_y - ggx_z) / p.sigma


def noisy_grads(oracle: "StochasticOracle", which: str, x, y, batch: int) -> Array:
    """Mini-batch average of unbiased noisy gradients from the oracle."""
    if not isinstance(batch, (int, np.integer)) or batch < 1:
        raise InputError(f"batch must be a positive integer, got {batch!r}")
    return oracle.draw(which, x, y, int(batch))


# ---------------------------------------------------------------------------
# stochastic oracle


_ORACLE_PARTS = ("f_x", "f_y", "g_x", "g_y")


@dataclass
class StochasticOracle:
    """Unbiased noisy gradient oracle over a deterministic base problem.

    Each draw returns the true gradient plus isotropic Gaussian noise with
    total variance M^2 (M = ``noise_std_f`` for f-gradients, ``noise_std_g``
    for g-gradients), so a batch-B average has variance M^2 / B.  Draws come
    from a counter-based stream: resetting the counter replays the exact
    noise sequence.
    """

    base: BilevelProblem
    noise_std_f: float
    noise_std_g: float
    rng_seed: int
    counter: int = 0

    def __post_init__(self):
        if self.noise_std_f < 0 or self.noise_std_g < 0:
            raise ConfigError("noise standard deviations must be >= 0")
        self._gen = substream(self.rng_seed, "oracle")

    def reset(self):
        """Rewind the noise stream to its initial state."""
        self.counter = 0
        self._gen = substream(self.rng_seed, "oracle")

    def _lookup(self, which: str):
        base = self.base
        table = {
            "f_x": (base.grad_f_x, self.noise_std_f, base.dim_x),
            "f_y": (base.grad_f_y, self.noise_std_f, base.dim_y),
            "g_x": (base.grad_g_x, self.noise_std_g, base.dim_x),
            "g_y": (base.grad_g_y, self.noise_std_g, base.dim_y),
        }
        if which not in table:
            raise InputError(f"unknown gradient selector {which!r}; "
                             f"expected one of {_ORACLE_PARTS}")
        return table[which]

    def draw(self, which: str, x, y, batch: int = 1) -> Array:
        if batch < 1:
            raise InputError(f"batch must be >= 1, got {batch}")
        fn, std, dim = self._lookup(which)
        x, y = self.base.check_point(x, y)
        mean = _require_finite(fn(x, y), x, y, f"grad {which}")
        if std == 0.0:
            return mean
        # per-draw covariance (M^2/dim) I so that E||noise||^2 = M^2 per call
        noise = self._gen.standard_normal((batch, dim)).mean(axis=0)
        self.counter += batch
        return mean + (std / math.sqrt(dim)) * noise


# ---------------------------------------------------------------------------
# penalized hyper-objective evaluation


def _grid_min(fn, box, n_per_dim: int, rounds: int = 3):
    """Zooming grid minimizer over a per-coordinate box (dim <= 2).

    Grids always include the box endpoints, so minimizers sitting exactly at
    declared corners/kinks are found exactly.  Returns (argmin, min).
    """
    box = [tuple(map(float, b)) for b in box]
    dim = len(box)
    if dim > 2:
        raise CapabilityError(
            f"grid evaluation supports dim_y <= 2, got dim_y = {dim}"
        )
    best_pt, best_val = None, math.inf
    cur = list(box)
    for _ in range(rounds):
        axes = [np.linspace(lo, hi, n_per_dim) for lo, hi in cur]
        if dim == 1:
            pts = axes[0][:, None]
        else:
            g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
            pts = np.column_stack([g0.ravel(), g1.ravel()])
        vals = np.array([fn(p) for p in pts])
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val = float(vals[k])
            best_pt = pts[k].copy()
        # zoom around the incumbent, clipped to the original box
        nxt = []
        for d in range(dim):
            lo0, hi0 = box[d]
            span = (cur[d][1] - cur[d][0]) / (n_per_dim - 1) * 4
            c = best_pt[d]
            nxt.append((max(lo0, c - span), min(hi0, c + span)))
        cur = nxt
    spacing = max((hi - lo) / (n_per_dim - 1) for lo, hi in cur)
    return best_pt, best_val, spacing


def penalized_hyperobjective_value(
    p: PenaltyObjective, x, y0=None, max_iter: int = 500_000
) -> PenaltyValue:
    """Evaluate phi_sigma(x) = (min_y h_sigma - g*(x)) / sigma.

    Unconstrained problems are solved by gradient descent on h_sigma and on g
    to gradient norm ``p.gstar_tolerance``; box-constrained problems use the
    zooming grid minimizer over the declared box.  The returned certificate
    bounds the value error from the achieved residuals via PL quadratic
    growth (or from the final grid spacing on the box path).
    """
    from .inner import descend_single  # late import: inner depends on core types

    prob = p.problem
    x = prob.check_point(x)
    c = prob.constants
    meta = prob.meta
    if meta is not None and meta.penalty_refusal:
        raise CapabilityError(f"penalty formulation refused: {meta.penalty_refusal}")

    if meta is not None and meta.y_box is not None:
        def h_of(y):
            return p.sigma * prob.f(x, y) + prob.g(x, y)

        def g_of(y):
            return prob.g(x, y)

        _, h_min, s_h = _grid_min(h_of, meta.y_box, 201 if prob.dim_y == 2 else 4001)
        _, g_min, s_g = _grid_min(g_of, meta.y_box, 201 if prob.dim_y == 2 else 4001)
        value = (h_min - g_min) / p.sigma
        # quadratic envelope around a grid-resolved minimizer
        curv = p.sigma * c.L_f + c.L_g
        bound = (curv * s_h**2 / 2 + c.L_g * s_g**2 / 2) / p.sigma
        return PenaltyValue(value, bound, math.nan, math.nan)

    if y0 is None:
        _, y0 = prob.default_start()
    y0 = as_vector(y0, prob.dim_y, "y0")

    tau_h = 1.0 / (p.sigma * c.L_f + c.L_g)
    yh, res_h, _ = descend_single(
        lambda y: p.sigma * prob.grad_f_y(x, y) + prob.grad_g_y(x, y),
        y0, tau_h, tol=p.gstar_tolerance, max_iter=max_iter,
        label="penalty descent",
    )
    # warm-start the lower-level solve at the penalty minimizer: the two
    # solution sets are O(sigma)-close under the PL assumption
    yg, res_g, _ = descend_single(
        lambda y: prob.grad_g_y(x, y),
        yh, 1.0 / c.L_g, tol=p.gstar_tolerance, max_iter=max_iter,
        label="lower-level descent",
    )
    h_min = p.sigma * prob.f(x, yh) + prob.g(x, yh)
    g_min = prob.g(x, yg)
    value = (h_min - g_min) / p.sigma
    mu_h = c.mu  # h_sigma inherits the lower-level PL constant up to O(sigma)
    bound = (res_h**2 / (2 * mu_h) + res_g**2 / (2 * c.mu)) / p.sigma
    return PenaltyValue(float(value), float(bound), float(res_h), float(res_g))
