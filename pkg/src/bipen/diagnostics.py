"""Independent oracles and checkers.

Everything here deliberately avoids the estimator code paths it is used to
verify: hypergradients are recomputed by finite differences of the penalized
value function and by an explicit pseudoinverse formula; solution sets are
handled as explicit point clouds; PL/proximal error-bound constants are
certified by brute probing; stationarity is measured through the residual
triplet of the gradient-based reformulation

    R_x = || grad_x f + hess_xy g . w ||,
    R_w = || hess_yy g (grad_y f + hess_yy g . w) ||,   w = -pinv(hess_yy g) grad_y f,
    R_y = g(x, y) - g*(x)            (floored at 0, g* from a certified pre-solve),

declared epsilon-stationary when R_x <= eps, R_w <= eps and R_y <= eps^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import (
    BilevelProblem,
    PenaltyObjective,
    as_bilevel,
    as_vector,
    penalized_hyperobjective_value,
)
from .errors import CapabilityError, ConfigError, InputError, NumericError
from .inner import descend_single
from .rng import substream


# ---------------------------------------------------------------------------
# solution-set point clouds


@dataclass(frozen=True)
class SolutionSetApprox:
    """Finite stand-in for a solution set: points plus certified residuals.

    Every stored point carries the inner gradient norm achieved when it was
    produced, so downstream set-distance numbers inherit an explicit
    accuracy statement.
    """

    points: np.ndarray     # (n, dim)
    residuals: np.ndarray  # (n,)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        res = np.atleast_1d(np.asarray(self.residuals, dtype=float))
        if pts.shape[0] == 0:
            raise InputError("a solution-set approximation needs at least one point")
        if res.shape != (pts.shape[0],):
            raise InputError(
                f"residuals shape {res.shape} does not match {pts.shape[0]} points"
            )
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(res)):
            raise NumericError("non-finite entries in solution-set approximation")
        if np.any(res < 0):
            raise InputError("residuals must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "residuals", res)

    @classmethod
    def from_presolves(cls, problem, x, sigma: float, starts, tol: float = 1e-10,
                       max_iter: int = 500_000) -> "SolutionSetApprox":
        """Descend h_sigma(x, .) (g when sigma = 0) from every start point."""
        prob = as_bilevel(problem)
        x = as_vector(x, prob.dim_x, "x")
        c = prob.constants
        if sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {sigma}")
        tau = 1.0 / (sigma * c.L_f + c.L_g)

        def grad(y):
            if sigma == 0.0:
                return prob.grad_g_y(x, y)
            return sigma * prob.grad_f_y(x, y) + prob.grad_g_y(x, y)

        pts, res = [], []
        for y0 in starts:
            y, r, _ = descend_single(grad, as_vector(y0, prob.dim_y, "start"),
                                     tau, tol=tol, max_iter=max_iter,
                                     label="solution pre-solve")
            pts.append(y)
            res.append(r)
        return cls(np.array(pts), np.array(res))


def _as_point_cloud(S) -> np.ndarray:
    if isinstance(S, SolutionSetApprox):
        return S.points
    arr = np.asarray(S, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InputError(f"expected a nonempty (n, d) point cloud, got shape {arr.shape}")
    return arr


def hausdorff_distance(S1, S2) -> float:
    """Symmetric Hausdorff distance between two finite point clouds."""
    A, B = _as_point_cloud(S1), _as_point_cloud(S2)
    if A.shape[1] != B.shape[1]:
        raise InputError(f"point dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    d = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


# ---------------------------------------------------------------------------
# hypergradient routes


class FDHypergradient(NamedTuple):
    grad: np.ndarray
    sigma: float
    error_estimate: float  # sigma-sensitivity plus inner-accuracy leakage


def fd_hypergradient(problem, x, sigma: float = 1e-5, step: float = 1e-4,
                     y0=None) -> FDHypergradient:
    """Central finite differences of the penalized value function.

    Differentiates phi_sigma at the default sigma = 1e-5 and reports, as the
    error estimate, the observed sensitivity to halving sigma plus the
    propagated inner-solve certificates.  Entirely independent of the
    first-order estimator.
    """
    prob = as_bilevel(problem)
    x = as_vector(x, prob.dim_x, "x")
    if not (np.isfinite(step) and step > 0):
        raise ConfigError(f"fd step must be > 0, got {step}")

    def grad_at(sig):
        p = PenaltyObjective(prob, sig)
        g = np.zeros(prob.dim_x)
        leak = 0.0
        for i in range(prob.dim_x):
            e = np.zeros(prob.dim_x)
            e[i] = step
            hi = penalized_hyperobjective_value(p, x + e, y0=y0)
            lo = penalized_hyperobjective_value(p, x - e, y0=y0)
            g[i] = (hi.value - lo.value) / (2.0 * step)
            leak += (hi.error_bound + lo.error_bound) / (2.0 * step)
        return g, leak

    g1, leak1 = grad_at(sigma)
    g2, leak2 = grad_at(sigma / 2.0)
    sens = float(np.linalg.norm(g1 - g2))
    return FDHypergradient(g1, sigma, sens + leak1 + leak2)


def _pl_pinv(H: np.ndarray, cutoff: float) -> np.ndarray:
    """Symmetric pseudoinverse discarding eigenvalues below ``cutoff``."""
    vals, vecs = np.linalg.eigh(np.asarray(H, dtype=float))
    inv = np.where(vals >= cutoff, 1.0 / np.where(vals >= cutoff, vals, 1.0), 0.0)
    return (vecs * inv) @ vecs.T


def exact_hypergradient_pinv(problem, x, y_star, residual_tol: float = 1e-8) -> np.ndarray:
    """Implicit-function hypergradient at an (essentially) exact minimizer:

        grad phi = grad_x f - hess_xy g . pinv(hess_yy g) . grad_y f,

    with the pseudoinverse cut off at mu/2 so kernel directions are dropped
    rather than amplified.  Requires the problem's Hessian blocks.
    """
    prob = as_bilevel(problem)
    x, y_star = prob.check_point(x, y_star)
    if prob.hess_g_yy is None or prob.hess_g_xy is None:
        raise CapabilityError("pseudoinverse hypergradient needs hess_g_yy and hess_g_xy")
    resid = float(np.linalg.norm(prob.grad_g_y(x, y_star)))
    if resid > residual_tol:
        raise InputError(
            f"y_star is not a certified minimizer: ||grad_y g|| = {resid:.3e} "
            f"> {residual_tol:g}"
        )
    pinv = _pl_pinv(prob.hess_g_yy(x, y_star), prob.constants.mu / 2.0)
    gfy = prob.grad_f_y(x, y_star)
    return prob.grad_f_x(x, y_star) - np.asarray(prob.hess_g_xy(x, y_star)) @ (pinv @ gfy)


def hypergradient_routes(suite, x, sigma: float = 1e-5) -> dict:
    """All available hypergradient routes at x, plus pairwise disagreements.

    Routes: 'fd' (always), 'pinv' (when Hessian blocks and a certified
    minimizer are available), 'analytic' (when the problem declares one).
    """
    prob = as_bilevel(suite)
    x = as_vector(x, prob.dim_x, "x")
    routes = {"fd": fd_hypergradient(prob, x, sigma=sigma).grad}
    project = getattr(suite, "project_y_star", None)
    if prob.hess_g_yy is not None and prob.hess_g_xy is not None:
        if project is not None:
            _, y0 = prob.default_start()
            y_star = project(x, y0, 0.0)
        else:
            y_star, _, _ = descend_single(
                lambda y: prob.grad_g_y(x, y), prob.default_start()[1],
                1.0 / prob.constants.L_g, tol=1e-10,
                label="pinv pre-solve")
        routes["pinv"] = exact_hypergradient_pinv(prob, x, y_star)
    if prob.analytic_grad_phi is not None:
        routes["analytic"] = np.asarray(prob.analytic_grad_phi(x), dtype=float)
    diffs = {}
    names = sorted(routes)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            diffs[f"{a}~{b}"] = float(np.linalg.norm(routes[a] - routes[b]))
    return {"routes": routes, "disagreements": diffs}


# ---------------------------------------------------------------------------
# PL and proximal error-bound certificates


class PLCertificate(NamedTuple):
    min_ratio: float
    worst_x: np.ndarray
    worst_y: np.ndarray
    used: int
    skipped: int


def pl_ratio_certificate(problem, sigma: float = 0.0, probes: int = 200,
                         seed: int = 0, region: Optional[tuple] = None) -> PLCertificate:
    """Empirical lower bound on the PL ratio ||grad h||^2 / (2 (h - h*)).

    h is g(x, .) for sigma = 0, otherwise h_sigma(x, .).  h*(x) is taken as
    the minimum over descents started from the default start *and* from
    every probe, so a probe stuck in a spurious basin would lower h* and
    depress the certificate instead of inflating it.  Probes with gap
    <= 1e-12 are skipped (0/0 convention).
    """
    prob = as_bilevel(problem)
    c = prob.constants
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if probes < 1:
        raise InputError(f"probes must be >= 1, got {probes}")
    if region is not None:
        x_lo, x_hi, y_lo, y_hi = region
    elif prob.meta is not None:
        x_lo, x_hi = prob.meta.x_window
        y_lo, y_hi = prob.meta.y_window
    else:
        raise ConfigError("no probe region: problem has no meta and none was given")

    rng = substream(seed, "pl-ratio", round(sigma * 1e9))
    tau = 1.0 / (sigma * c.L_f + c.L_g)

    def h_and_grad(x, y):
        if sigma == 0.0:
            return prob.g(x, y), prob.grad_g_y(x, y)
        return (sigma * prob.f(x, y) + prob.g(x, y),
                sigma * prob.grad_f_y(x, y) + prob.grad_g_y(x, y))

    n_x = max(1, probes // 20)
    n_y = max(1, probes // n_x)
    min_ratio = math.inf
    worst = (np.zeros(prob.dim_x), np.zeros(prob.dim_y))
    used = skipped = 0
    for _ in range(n_x):
        x = rng.uniform(x_lo, x_hi, size=prob.dim_x)
        ys = [rng.uniform(y_lo, y_hi, size=prob.dim_y) for _ in range(n_y)]
        _, y0 = prob.default_start()
        h_star = math.inf
        for start in [y0] + ys:
            y_min, _, _ = descend_single(
                lambda v: h_and_grad(x, v)[1], start, tau, tol=1e-12,
                label="PL pre-solve")
            h_star = min(h_star, h_and_grad(x, y_min)[0])
        for y in ys:
            hv, gv = h_and_grad(x, y)
            gap = hv - h_star
            if gap <= 1e-12:
                skipped += 1
                continue
            ratio = float(np.linalg.norm(gv) ** 2 / (2.0 * gap))
            used += 1
            if ratio < min_ratio:
                min_ratio = ratio
                worst = (x.copy(), y.copy())
    return PLCertificate(min_ratio, worst[0], worst[1], used, skipped)


class ProxEBResult(NamedTuple):
    mu_prime: float    # empirical lower bound on the prox error-bound constant
    predicted: float   # mu / (1 + 2 L_g rho)
    used: int
    skipped: int


def prox_eb_check(suite, sigma: float, rho: float, probes: int = 50,
                  seed: int = 0) -> ProxEBResult:
    """Empirical proximal error bound  ||y - prox(y)|| / rho >= mu' dist(y, Y*_sigma).

    The proximal point minimizes h_sigma(x, .) + ||. - y||^2 / (2 rho), which
    is strongly convex for rho < 1/(2 L_g); distances to Y*_sigma come from
    the suite's analytic projection.  Probes already on the solution set are
    skipped (0/0 convention).
    """
    prob = as_bilevel(suite)
    c = prob.constants
    project = getattr(suite, "project_y_star", None)
    if project is None:
        raise CapabilityError("prox error-bound check needs an analytic projection "
                              "onto Y*_sigma")
    if not (0 < rho < 1.0 / (2.0 * c.L_g)):
        raise ConfigError(f"rho must lie in (0, 1/(2 L_g)) = (0, {1.0 / (2 * c.L_g):g}), "
                          f"got {rho}")
    if not (0 < sigma <= c.sigma_bar):
        raise ConfigError(f"sigma must lie in (0, {c.sigma_bar}], got {sigma}")
    meta = prob.meta
    rng = substream(seed, "prox-eb")
    tau = 1.0 / (sigma * c.L_f + c.L_g + 1.0 / rho)
    min_ratio = math.inf
    used = skipped = 0
    for _ in range(probes):
        x = rng.uniform(*meta.x_window, size=prob.dim_x)
        y = rng.uniform(*meta.y_window, size=prob.dim_y)
        dist = float(np.linalg.norm(y - project(x, y, sigma)))
        if dist <= 1e-12:
            skipped += 1
            continue
        prox, _, _ = descend_single(
            lambda v: (sigma * prob.grad_f_y(x, v) + prob.grad_g_y(x, v)
                       + (v - y) / rho),
            y, tau, tol=1e-12, label="prox solve")
        ratio = float(np.linalg.norm(y - prox) / (rho * dist))
        used += 1
        min_ratio = min(min_ratio, ratio)
    return ProxEBResult(min_ratio, c.mu / (1.0 + 2.0 * c.L_g * rho), used, skipped)


# ---------------------------------------------------------------------------
# stationarity residuals


class GaletResiduals(NamedTuple):
    R_x: float
    R_w: float
    R_y: float
    w: np.ndarray

    def stationary(self, eps: float) -> bool:
        return self.R_x <= eps and self.R_w <= eps and self.R_y <= eps * eps


def galet_residuals(problem, x, y, gstar_tol: float = 1e-12) -> GaletResiduals:
    """Residual triplet of the gradient-based stationarity reformulation.

    g*(x) comes from a certified pre-solve started at the queried point (the
    PL property makes any basin global); a certified minimum above the
    queried value by more than rounding noise raises NumericError.
    """
    prob = as_bilevel(problem)
    x, y = prob.check_point(x, y)
    if prob.hess_g_yy is None or prob.hess_g_xy is None:
        raise CapabilityError("stationarity residuals need hess_g_yy and hess_g_xy")
    c = prob.constants
    H = np.asarray(prob.hess_g_yy(x, y), dtype=float)
    gfy = prob.grad_f_y(x, y)
    w = -_pl_pinv(H, c.mu / 2.0) @ gfy
    R_x = float(np.linalg.norm(prob.grad_f_x(x, y)
                               + np.asarray(prob.hess_g_xy(x, y)) @ w))
    R_w = float(np.linalg.norm(H @ (gfy + H @ w)))
    g_val = float(prob.g(x, y))
    if prob.meta is not None and prob.meta.y_box is not None:
        from .core import _grid_min
        _, g_star, _ = _grid_min(lambda v: prob.g(x, v), prob.meta.y_box,
                                 201 if prob.dim_y == 2 else 4001)
    else:
        y_min, _, _ = descend_single(lambda v: prob.grad_g_y(x, v), y,
                                     1.0 / c.L_g, tol=gstar_tol,
                                     label="g* pre-solve")
        g_star = float(prob.g(x, y_min))
    gap = g_val - g_star
    if gap < -1e-9 * (1.0 + abs(g_star)):
        raise NumericError(
            f"certified g* = {g_star:.6g} exceeds the queried value {g_val:.6g}; "
            "pre-solve is not trustworthy here", point=(x.copy(), y.copy()))
    return GaletResiduals(R_x, R_w, max(gap, 0.0), w)


# ---------------------------------------------------------------------------
# smoothness and constants checks


class SmoothnessEstimate(NamedTuple):
    max_ratio: float
    scale: float        # the worst-case envelope ell * kappa^3
    fraction: float     # max_ratio / scale
    used: int
    skipped: int


def smoothness_probe(problem, x_pairs) -> SmoothnessEstimate:
    """Empirical Lipschitz ratio of the hyper-objective gradient.

    Uses the analytic gradient when declared, finite differences otherwise.
    Pairs closer than 1e-12 are skipped.
    """
    prob = as_bilevel(problem)
    c = prob.constants

    if prob.analytic_grad_phi is not None:
        def grad(x):
            return np.asarray(prob.analytic_grad_phi(x), dtype=float)
    else:
        def grad(x):
            return fd_hypergradient(prob, x).grad

    max_ratio = 0.0
    used = skipped = 0
    for x1, x2 in x_pairs:
        x1 = as_vector(x1, prob.dim_x, "x1")
        x2 = as_vector(x2, prob.dim_x, "x2")
        gap = float(np.linalg.norm(x1 - x2))
        if gap <= 1e-12:
            skipped += 1
            continue
        used += 1
        max_ratio = max(max_ratio, float(np.linalg.norm(grad(x1) - grad(x2))) / gap)
    scale = c.ell * c.kappa ** 3
    return SmoothnessEstimate(max_ratio, scale, max_ratio / scale, used, skipped)


def check_gradients(problem, n_probes: int = 100, seed: int = 0,
                    step: float = 1e-6) -> float:
    """Max relative error of declared gradients against central differences.

    Probes are sampled inside the problem's declared windows; the step is
    scaled by the probe magnitude.  Returns the worst relative error over
    all four gradients.
    """
    prob = as_bilevel(problem)
    meta = prob.meta
    if meta is None:
        raise ConfigError("gradient check needs a problem with probe windows")
    rng = substream(seed, "fd-check")
    worst = 0.0
    for _ in range(n_probes):
        x = rng.uniform(*meta.x_window, size=prob.dim_x)
        y = rng.uniform(*meta.y_window, size=prob.dim_y)
        h = step * max(1.0, float(np.hypot(np.linalg.norm(x), np.linalg.norm(y))))

        for fn, gx, gy in ((prob.f, prob.grad_f_x, prob.grad_f_y),
                           (prob.g, prob.grad_g_x, prob.grad_g_y)):
            fd_x = np.zeros(prob.dim_x)
            for i in range(prob.dim_x):
                e = np.zeros(prob.dim_x)
                e[i] = h
                fd_x[i] = (fn(x + e, y) - fn(x - e, y)) / (2 * h)
            fd_y = np.zeros(prob.dim_y)
            for i in range(prob.dim_y):
                e = np.zeros(prob.dim_y)
                e[i] = h
                fd_y[i] = (fn(x, y + e) - fn(x, y - e)) / (2 * h)
            for fd, grad in ((fd_x, gx(x, y)), (fd_y, gy(x, y))):
                err = np.linalg.norm(fd - np.asarray(grad))
                worst = max(worst, float(err / (1.0 + np.linalg.norm(grad))))
    return worst


def check_smoothness_constants(problem, n_pairs: int = 200, seed: int = 0) -> dict:
    """Empirical gradient-difference ratios against declared L_f and L_g.

    The declarations are block-wise -- L bounds each gradient block's
    Lipschitz modulus in each argument separately, which is how step sizes
    and estimator bounds consume them -- so each of the four blocks is
    probed separately against variation in x and in y.  Returns the max
    ratio per (block, argument); callers compare against declarations.
    """
    prob = as_bilevel(problem)
    meta = prob.meta
    if meta is None:
        raise ConfigError("smoothness check needs a problem with probe windows")
    rng = substream(seed, "lip-check")
    blocks = (("grad_f_x", prob.grad_f_x), ("grad_f_y", prob.grad_f_y),
              ("grad_g_x", prob.grad_g_x), ("grad_g_y", prob.grad_g_y))
    out = {f"{name}/d{var}": 0.0 for name, _ in blocks for var in ("x", "y")}

    for _ in range(n_pairs):
        x = rng.uniform(*meta.x_window, size=prob.dim_x)
        y1 = rng.uniform(*meta.y_window, size=prob.dim_y)
        y2 = rng.uniform(*meta.y_window, size=prob.dim_y)
        gap = float(np.linalg.norm(y1 - y2))
        if gap > 1e-9:
            for name, fn in blocks:
                d = float(np.linalg.norm(np.asarray(fn(x, y1)) - np.asarray(fn(x, y2))))
                out[f"{name}/dy"] = max(out[f"{name}/dy"], d / gap)
        x1 = rng.uniform(*meta.x_window, size=prob.dim_x)
        x2 = rng.uniform(*meta.x_window, size=prob.dim_x)
        y = rng.uniform(*meta.y_window, size=prob.dim_y)
        gap = float(np.linalg.norm(x1 - x2))
        if gap > 1e-9:
            for name, fn in blocks:
                d = float(np.linalg.norm(np.asarray(fn(x1, y)) - np.asarray(fn(x2, y))))
                out[f"{name}/dx"] = max(out[f"{name}/dx"], d / gap)
    return out


# ---------------------------------------------------------------------------
# grid value-function oracle and solution-set stability


def grid_hyper_objective(problem, x, n: int = 5001, tie_tol: float = 1e-9) -> float:
    """Brute-force phi(x): grid-minimize g, then minimize f over the tie set.

    One-dimensional lower levels only; the grid covers the declared box (when
    present) or probe window, including the endpoints exactly.
    """
    prob = as_bilevel(problem)
    x = as_vector(x, prob.dim_x, "x")
    if prob.dim_y != 1:
        raise CapabilityError("grid hyper-objective supports dim_y = 1 only")
    meta = prob.meta
    if meta is None:
        raise ConfigError("grid hyper-objective needs declared windows")
    lo, hi = meta.y_box[0] if meta.y_box is not None else meta.y_window
    ys = np.linspace(lo, hi, n)
    gv = np.array([prob.g(x, np.array([t])) for t in ys])
    ties = gv <= gv.min() + tie_tol * (1.0 + abs(float(gv.min())))
    fv = np.array([prob.f(x, np.array([t])) for t in ys[ties]])
    return float(fv.min())


def set_lipschitz_check(suite, n_pairs: int = 100, seed: int = 0,
                        n_samples: int = 51, slack: float = 1e-9) -> dict:
    """Stability of penalized solution sets in (x, sigma).

    For random pairs (x1, sigma1), (x2, sigma2) the Hausdorff distance of
    the sampled sets must not exceed

        (C_f / mu) |sigma1 - sigma2|
        + ((max(sigma) L_f + L_g) / mu) ||x1 - x2||  (+ slack).

    Requires the suite's analytic set sampler.  Returns counts and the worst
    ratio distance / bound.
    """
    sampler = getattr(suite, "sample_y_star", None)
    if sampler is None:
        raise CapabilityError("set stability check needs an analytic set sampler")
    prob = as_bilevel(suite)
    c = prob.constants
    meta = prob.meta
    rng = substream(seed, "set-lip")
    violations = []
    worst_ratio = 0.0
    for _ in range(n_pairs):
        x1, x2 = rng.uniform(*meta.x_window, size=2)
        s1, s2 = rng.uniform(0.0, c.sigma_bar, size=2)
        d = hausdorff_distance(sampler(x1, s1, n_samples), sampler(x2, s2, n_samples))
        bound = (c.C_f / c.mu) * abs(s1 - s2) \
            + ((max(s1, s2) * c.L_f + c.L_g) / c.mu) * abs(x1 - x2)
        if bound > 0:
            worst_ratio = max(worst_ratio, d / bound)
        if d > bound + slack:
            violations.append((float(x1), float(s1), float(x2), float(s2), d, bound))
    return {"checked": n_pairs, "violations": violations, "worst_ratio": worst_ratio}
