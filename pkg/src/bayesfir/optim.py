"""One-step hyperparameter updaters and the iterate-to-convergence baseline.

Each online update performs a single projected scaled-gradient iteration

    z = Pi_box(eta - B grad L(eta)),    eta_next = eta + gamma (z - eta),

with the metric B chosen per method (Barzilai-Borwein step, split gradient
projection scaling, or a damped BFGS matrix) and gamma found by Armijo
backtracking.  EM alternatives update lam in closed form (optionally with a
golden-section search over beta).  State needed across batches is only the
previous iterate, its gradient, the BB alternation threshold, and the BFGS
matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .kernel import (
    Hyperparameters,
    NotPositiveDefiniteError,
    unit_kernel_inverse_bands,
    unit_kernel_logdet,
)
from .likelihood import (
    MLContext,
    NonFiniteLikelihoodError,
    grad_lambda_only,
    grad_neg_log_ml,
    neg_log_ml,
    posterior_moments,
)

GRADIENT_METHODS = ("bb", "sgp", "bfgs")
EM_METHODS = ("em", "em1", "em2")
METHODS = GRADIENT_METHODS + EM_METHODS

# Gradient evaluations clamp eta away from the boundary of the feasible box,
# where the split gradient is undefined.
GRAD_LAMBDA_FLOOR = 1e-12

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class OptimizerConfig:
    """Step-size clamps, line-search knobs, and convergence thresholds."""

    alpha_min: float = 1e-7
    alpha_max: float = 1e7
    d_min: float = 1e-10
    d_max: float = 1e10
    tau0: float = 0.5
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 20
    beta_eps: float = 1e-6
    opt_tol: float = 1e-6
    opt_max_iter: int = 500
    em_golden_tol: float = 1e-6
    em_max_evals: int = 100


@dataclass
class OptimizerState:
    """Cross-batch memory for the gradient-based one-step updaters.

    ``active`` selects the coordinates being optimized: (0,) freezes beta and
    updates lam only, (0, 1) updates both.  ``grad_prev`` and ``b_prev`` live
    on the active coordinates.
    """

    eta_prev: np.ndarray
    grad_prev: np.ndarray
    tau: float
    active: tuple = (0, 1)
    b_prev: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.b_prev is None:
            self.b_prev = np.eye(len(self.active))

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            eta_prev=self.eta_prev.copy(),
            grad_prev=self.grad_prev.copy(),
            tau=self.tau,
            active=self.active,
            b_prev=self.b_prev.copy(),
        )


@dataclass(frozen=True)
class StepReport:
    """Outcome of one updater application."""

    eta_new: Hyperparameters
    ml_before: float
    ml_after: float
    gamma: float
    backtracks: int  # rejected candidate step lengths
    method: str


class OptInfo(NamedTuple):
    state: Optional[OptimizerState]
    iterations: int


def _clamp_box(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out[0] = max(out[0], 0.0)
    out[1] = min(max(out[1], 0.0), 1.0)
    return out


def project(eta, w=None) -> Hyperparameters:
    """Projection of eta onto the feasible box {lam >= 0, 0 <= beta <= 1}.

    For an axis-aligned box and any positive diagonal metric the weighted
    projection reduces to the componentwise clamp, so ``w`` never changes the
    result; it is accepted to mirror the scaled-projection signature.
    """
    arr = eta.as_array() if isinstance(eta, Hyperparameters) else np.asarray(eta, dtype=float)
    clamped = _clamp_box(arr)
    return Hyperparameters(clamped[0], clamped[1])


def _interior(eta: Hyperparameters, cfg: OptimizerConfig) -> Hyperparameters:
    lam = max(eta.lam, GRAD_LAMBDA_FLOOR)
    beta = min(max(eta.beta, cfg.beta_eps), 1.0 - cfg.beta_eps)
    return Hyperparameters(lam, beta)


def secant_pair(state: OptimizerState, eta_arr: np.ndarray, grad_act: np.ndarray):
    """Displacement r and gradient difference w on the active coordinates."""
    act = list(state.active)
    r = np.asarray(eta_arr, dtype=float)[act] - state.eta_prev[act]
    w = np.asarray(grad_act, dtype=float) - state.grad_prev
    return r, w


def bb_stepsize(r: np.ndarray, w: np.ndarray, tau: float, cfg: OptimizerConfig,
                metric: np.ndarray = None):
    """Alternating Barzilai-Borwein step size; returns (alpha, tau_next).

    alpha1 = r'r / r'w and alpha2 = r'w / w'w are clamped to
    [alpha_min, alpha_max]; the shorter step is taken when their ratio falls
    below tau, which then shrinks (else grows) by 10%.  Non-positive curvature
    r'w falls back to alpha_min with tau unchanged.

    With ``metric`` (the positive diagonal d of a scaling matrix D) the two
    rules fit the scaled model B = alpha*D instead of alpha*I:
    alpha1 = r'D^-2 r / r'D^-1 w and alpha2 = r'D w / w'D^2 w.  Without this,
    a steplength fitted in the unscaled metric double-counts the scaling
    already in D and the combined step can underflow to nothing.  Non-positive
    curvature then falls back to alpha = 1 -- the raw fixed-point step that D
    encodes -- because alpha_min * D would freeze the iteration where the
    objective is locally concave (small lambda) instead of walking out of it.
    """
    if metric is None:
        cross = float(r @ w)
        a1_num, a1_den = float(r @ r), cross
        a2_num, a2_den = cross, float(w @ w)
        fallback = cfg.alpha_min
    else:
        rd = r / metric
        dw = metric * w
        a1_num, a1_den = float(rd @ rd), float(rd @ w)
        a2_num, a2_den = float(r @ dw), float(dw @ dw)
        fallback = 1.0
    if not (np.isfinite(a1_den) and np.isfinite(a2_num)) or a1_den <= 0.0 or a2_num <= 0.0 or a2_den <= 0.0:
        return fallback, tau
    a1 = min(max(a1_num / a1_den, cfg.alpha_min), cfg.alpha_max)
    a2 = min(max(a2_num / a2_den, cfg.alpha_min), cfg.alpha_max)
    if a2 / a1 <= tau:
        return a2, 0.9 * tau
    return a1, 1.1 * tau


def sgp_scaling(eta_act: np.ndarray, v_act: np.ndarray, cfg: OptimizerConfig) -> np.ndarray:
    """Diagonal scaling d_i = clamp(eta_i / V_i) from the positive gradient part."""
    eta_act = np.asarray(eta_act, dtype=float)
    v_act = np.asarray(v_act, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = eta_act / v_act
    ratio = np.where(np.isfinite(ratio), ratio, cfg.d_max)
    return np.clip(ratio, cfg.d_min, cfg.d_max)


def bfgs_update(b_prev: np.ndarray, r: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Direct BFGS update of the inverse-Hessian approximation B.

    Skips the update (returning b_prev) when the curvature r'w is not safely
    positive, so B stays symmetric positive definite; otherwise the returned B
    satisfies the secant equation B w = r exactly.
    """
    rw = float(r @ w)
    if rw <= 1e-12 * float(np.linalg.norm(r)) * float(np.linalg.norm(w)):
        return b_prev
    rho = 1.0 / rw
    eye = np.eye(len(r))
    m = eye - rho * np.outer(r, w)
    b = rho * np.outer(r, r) + m @ b_prev @ m.T
    return 0.5 * (b + b.T)


def _eval_grad(ctx: MLContext, eta: Hyperparameters, active: tuple, cfg: OptimizerConfig):
    """(grad, V) on the active coordinates, at the interior-clamped eta."""
    eta_eval = _interior(eta, cfg)
    if active == (0,):
        v_lam, u_lam = grad_lambda_only(ctx, eta_eval)
        return np.array([v_lam - u_lam]), np.array([v_lam])
    split = grad_neg_log_ml(ctx, eta_eval)
    return split.grad, split.V


def gradient_step(
    ctx: MLContext,
    state: OptimizerState,
    eta: Hyperparameters,
    method: str,
    cfg: OptimizerConfig = None,
) -> StepReport:
    """One projected scaled-gradient iteration; mutates ``state`` in place.

    After the call the state holds the pre-step iterate and its gradient,
    which is exactly the secant seed the next batch needs.
    """
    if method not in GRADIENT_METHODS:
        raise ValueError(f"unknown gradient method {method!r}")
    cfg = cfg or OptimizerConfig()
    act = list(state.active)
    eta_arr = eta.as_array()

    grad_act, v_act = _eval_grad(ctx, eta, state.active, cfg)
    r, w = secant_pair(state, eta_arr, grad_act)
    tau_new = state.tau
    b_new = state.b_prev
    if method == "bb":
        alpha, tau_new = bb_stepsize(r, w, state.tau, cfg)
        b = alpha * np.eye(len(act))
    elif method == "sgp":
        d_act = sgp_scaling(eta_arr[act], v_act, cfg)
        alpha, tau_new = bb_stepsize(r, w, state.tau, cfg, metric=d_act)
        b = alpha * np.diag(d_act)
    else:  # bfgs
        b_new = bfgs_update(state.b_prev, r, w)
        b = b_new

    step = np.zeros(2)
    step[act] = b @ grad_act
    z = _clamp_box(eta_arr - step)
    delta = z - eta_arr
    slope = float(grad_act @ delta[act])

    ml_before = neg_log_ml(ctx, eta)
    gamma = 0.0
    backtracks = 0
    ml_after = ml_before
    eta_new = eta
    if slope < 0.0:
        backtracks = cfg.max_backtracks
        # The box is convex, so eta + gamma * delta stays feasible for any
        # gamma in [0, 1]; the clamp only sweeps up rounding residue.
        for i in range(cfg.max_backtracks + 1):
            g = cfg.backtrack_factor**i
            cand = Hyperparameters.from_array(_clamp_box(eta_arr + g * delta))
            try:
                ml_c = neg_log_ml(ctx, cand)
            except NonFiniteLikelihoodError:
                continue
            if ml_c <= ml_before + cfg.armijo_c * g * slope:
                gamma = g
                backtracks = i
                ml_after = ml_c
                eta_new = cand
                break

    state.eta_prev = eta_arr
    state.grad_prev = grad_act
    state.tau = tau_new
    if method == "bfgs":
        if gamma == 0.0:
            # A rejected (or ascent) direction means the accumulated curvature
            # model has gone stale; restarting from identity is cheaper than
            # paying a full failed line search on every subsequent batch.
            b_new = np.eye(len(act))
        state.b_prev = b_new
    return StepReport(
        eta_new=eta_new,
        ml_before=ml_before,
        ml_after=ml_after,
        gamma=gamma,
        backtracks=backtracks,
        method=method,
    )


def _golden_min(fn, lo: float, hi: float, tol: float, max_evals: int):
    """Golden-section minimum of fn on [lo, hi]; returns the best evaluated (x, fx)."""
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    evals = 2
    while hi - lo > tol and evals < max_evals:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _INVPHI * (hi - lo)
            f1 = fn(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _INVPHI * (hi - lo)
            f2 = fn(x2)
        evals += 1
    return (x1, f1) if f1 <= f2 else (x2, f2)


def _inverse_kernel_trace(n: int, beta: float, diag: np.ndarray, offdiag: np.ndarray) -> float:
    """Tr(inv(unit kernel) @ M) from M's main and first super diagonal.

    The unit kernel's inverse is exactly tridiagonal, so the trace needs only
    the two bands of M: sum(d * diag) + 2 * sum(e * offdiag).
    """
    d, e = unit_kernel_inverse_bands(n, beta)
    return float(d @ diag) + 2.0 * float(e @ offdiag)


def em_step(
    ctx: MLContext, eta: Hyperparameters, cfg: OptimizerConfig = None, need_ml: bool = True
) -> StepReport:
    """Full EM update: posterior moments at eta, then the exact M-step.

    lam has the closed form (h'K_b^-1 h + Tr(K_b^-1 P)) / n for fixed beta, so
    the M-step reduces to a one-dimensional search over beta; the profiled
    objective is minimized by golden section and compared against the current
    beta so the evidence never degrades.  Each profile evaluation is O(n)
    thanks to the kernel's tridiagonal inverse, which keeps the full EM step
    as cheap as the gradient one-steps despite the inner search.

    ``need_ml=False`` skips the likelihood evaluations that only populate the
    report fields; the update itself never needs them.
    """
    cfg = cfg or OptimizerConfig()
    n = ctx.stats.n
    ml_before = neg_log_ml(ctx, eta) if need_ml else float("nan")
    mean, cov = posterior_moments(ctx, eta)
    second_moment = cov + np.outer(mean, mean)

    if float(np.trace(second_moment)) <= 0.0:
        # Degenerate posterior (lam already 0): the M-step sends lam to the
        # boundary and beta is irrelevant.
        eta_new = Hyperparameters(0.0, eta.beta)
        return StepReport(eta_new, ml_before, ml_before, 1.0, 0, "em")

    sm_diag = np.diagonal(second_moment).copy()
    sm_off = np.diagonal(second_moment, offset=1).copy()
    memo = {}

    def profile(beta: float) -> float:
        if beta in memo:
            return memo[beta][0]
        try:
            lam_star = _inverse_kernel_trace(n, beta, sm_diag, sm_off) / n
            logdet = unit_kernel_logdet(n, beta)
        except NotPositiveDefiniteError:
            memo[beta] = (np.inf, 0.0)
            return np.inf
        if not np.isfinite(lam_star) or lam_star <= 0.0:
            memo[beta] = (np.inf, 0.0)
            return np.inf
        g = n * np.log(lam_star) + logdet
        memo[beta] = (g, lam_star)
        return g

    lo, hi = cfg.beta_eps, 1.0 - cfg.beta_eps
    beta_cur = min(max(eta.beta, lo), hi)
    g_cur = profile(beta_cur)
    beta_gs, g_gs = _golden_min(profile, lo, hi, cfg.em_golden_tol, cfg.em_max_evals)
    beta_sel = beta_gs if g_gs < g_cur else beta_cur
    eta_new = Hyperparameters(memo[beta_sel][1], beta_sel)
    ml_after = neg_log_ml(ctx, eta_new) if need_ml else float("nan")
    return StepReport(eta_new, ml_before, ml_after, 1.0, 0, "em")


def em1_lambda(ctx: MLContext, eta: Hyperparameters) -> float:
    """lam update h'K_b^-1 h / n: EM with the posterior-covariance term dropped."""
    mean, _ = posterior_moments(ctx, eta)
    n = ctx.stats.n
    return _inverse_kernel_trace(n, eta.beta, mean * mean, mean[:-1] * mean[1:]) / n


def em2_lambda(ctx: MLContext, eta: Hyperparameters) -> float:
    """Exact fixed-beta EM update (h'K_b^-1 h + Tr(K_b^-1 P)) / n."""
    mean, cov = posterior_moments(ctx, eta)
    n = ctx.stats.n
    second_diag = np.diagonal(cov) + mean * mean
    second_off = np.diagonal(cov, offset=1) + mean[:-1] * mean[1:]
    return _inverse_kernel_trace(n, eta.beta, second_diag, second_off) / n


def em_variant_step(
    ctx: MLContext,
    eta: Hyperparameters,
    method: str,
    cfg: OptimizerConfig = None,
    need_ml: bool = True,
) -> StepReport:
    """One lam-only EM update (beta frozen), packaged as a StepReport."""
    if method not in ("em1", "em2"):
        raise ValueError(f"unknown EM variant {method!r}")
    ml_before = neg_log_ml(ctx, eta) if need_ml else float("nan")
    lam_new = em1_lambda(ctx, eta) if method == "em1" else em2_lambda(ctx, eta)
    eta_new = Hyperparameters(max(lam_new, 0.0), eta.beta)
    ml_after = neg_log_ml(ctx, eta_new) if need_ml else float("nan")
    return StepReport(eta_new, ml_before, ml_after, 1.0, 0, method)


def fresh_state(
    ctx: MLContext,
    eta: Hyperparameters,
    cfg: OptimizerConfig = None,
    lambda_only: bool = False,
    eta_prev: np.ndarray = None,
    grad_prev: np.ndarray = None,
) -> OptimizerState:
    """Optimizer state with a usable secant seed.

    Without a supplied previous iterate the seed is eta scaled by (1 + 1e-3)
    componentwise (clamped to the box), whose gradient is evaluated on the
    current context.
    """
    cfg = cfg or OptimizerConfig()
    active = (0,) if lambda_only else (0, 1)
    if eta_prev is None:
        eta_prev = _clamp_box(eta.as_array() * (1.0 + 1e-3))
    eta_prev = np.asarray(eta_prev, dtype=float)
    if grad_prev is None:
        grad_prev, _ = _eval_grad(ctx, Hyperparameters.from_array(eta_prev), active, cfg)
    grad_prev = np.asarray(grad_prev, dtype=float)
    return OptimizerState(
        eta_prev=eta_prev,
        grad_prev=grad_prev,
        tau=cfg.tau0,
        active=active,
    )


def opt_until_convergence(
    ctx: MLContext,
    eta0: Hyperparameters,
    method: str = "sgp",
    cfg: OptimizerConfig = None,
    lambda_only: bool = False,
    return_info: bool = False,
):
    """Iterate the chosen updater on fixed data until the objective settles.

    Stops when |L_j - L_{j-1}| <= opt_tol * (1 + |L_j|) or after opt_max_iter
    iterations.  With return_info=True also returns the final optimizer state
    (whose eta_prev/grad_prev form a secant seed) and the iteration count.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    cfg = cfg or OptimizerConfig()
    eta = eta0
    state = None
    if method in GRADIENT_METHODS:
        state = fresh_state(ctx, eta0, cfg, lambda_only=lambda_only)
    iterations = 0
    for _ in range(cfg.opt_max_iter):
        if method in GRADIENT_METHODS:
            rep = gradient_step(ctx, state, eta, method, cfg)
        elif method == "em":
            rep = em_step(ctx, eta, cfg)
        else:
            rep = em_variant_step(ctx, eta, method, cfg)
        eta = rep.eta_new
        iterations += 1
        if abs(rep.ml_after - rep.ml_before) <= cfg.opt_tol * (1.0 + abs(rep.ml_after)):
            break
    if return_info:
        return eta, OptInfo(state=state, iterations=iterations)
    return eta
