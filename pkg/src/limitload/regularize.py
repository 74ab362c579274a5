"""Regularized lower bounds via a family of finite, differentiable supports.

For alpha > 0 the support functional is smoothed into

    J_alpha(y) = max over admissible x of { <x, Gy>_X - ||x||_X^2 / (2 alpha) }
               = <P y, Gy>_X - ||P y||_X^2 / (2 alpha),   P y = proj(alpha Gy),

which is finite everywhere, nondecreasing in alpha, and converges to the
support J from below.  Minimizing J_alpha subject to L(y) = 1 yields the value
psi(alpha), a guaranteed lower bound of the critical multiplier that tends to
it as alpha grows.  The constraint is handled by eliminating the coordinate
with the largest |L| entry, leaving a smooth unconstrained problem solved with
a safeguarded Barzilai-Borwein descent; the multiplier is recovered afterwards
by projecting the gradient onto the load direction in the M^-1 metric.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .blocks import BALL, DEVIATORIC_BALL, INTERVAL
from .certificates import estimate_norm_a, estimate_norm_L_dual
from .errors import ConvergenceError


def project_Pi_alpha(problem, alpha, y):
    """Maximizer of <x, Gy>_X - ||x||^2/(2 alpha): blockwise clamp of alpha Gy."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    y = np.asarray(y, float)
    if y.shape != (problem.n_y,):
        raise ValueError(f"y has length {y.size}, expected {problem.n_y}")
    return problem.ops.project_set(alpha * problem.gy(y))


def eval_J_alpha(problem, alpha, y):
    """Regularized support value; finite for every y."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    y = np.asarray(y, float)
    g = problem.gy(y)
    pi = problem.ops.project_set(alpha * g)
    return problem.x_inner(pi, g) - problem.x_inner(pi, pi) / (2.0 * alpha)


def grad_J_alpha(problem, alpha, y):
    """Euclidean-coordinate gradient: g with g.z = <P y, Gz>_X for all z."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    y = np.asarray(y, float)
    pi = problem.ops.project_set(alpha * problem.gy(y))
    return problem.gt_w(pi)


@dataclass
class RegPathRecord:
    """One alpha-step of the continuation: value, multiplier and residual."""

    alpha: float
    psi: float
    lambda_alpha: float
    y_alpha: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool = True


@dataclass
class AlphaSchedule:
    """Geometric alpha sequence with an optional value-increment stop."""

    alpha0: float
    growth: float = 4.0
    count: int = 12
    psi_increment_stop: float = 0.0

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.growth <= 1:
            raise ValueError("growth must exceed 1 (strictly increasing sequence)")
        if self.count < 1:
            raise ValueError("empty schedule")

    def values(self):
        return [self.alpha0 * self.growth ** k for k in range(self.count)]


def default_schedule(problem, count=12, growth=4.0):
    """Scale-aware starting value: alpha0 * ||a|| * ||L||_{Y*} / (L^T M^-1 L)
    roughly equals the smallest bounded-block radius."""
    radii = []
    for b in problem.blocks:
        if b.kind in (BALL, DEVIATORIC_BALL):
            radii.append(b.gamma)
        elif b.kind == INTERVAL:
            radii.append(max(abs(b.lo), abs(b.hi)))
    norm_a = estimate_norm_a(problem)
    norm_l = estimate_norm_L_dual(problem)
    if radii and norm_a > 0 and norm_l > 0:
        alpha0 = min(radii) * norm_l / norm_a   # since L^T M^-1 L = ||L||^2
    else:
        alpha0 = 1.0 / max(norm_a, 1.0)
    return AlphaSchedule(alpha0=alpha0, growth=growth, count=count)


def _multiplier_and_residual(problem, grad):
    cached = problem._cache.get("minv_load")
    if cached is None:
        minv_l = problem.m_solve(problem.load)
        cached = (minv_l, float(problem.load @ minv_l))
        problem._cache["minv_load"] = cached
    minv_l, ll = cached
    lam = float(grad @ minv_l) / ll
    res = problem.dual_norm(grad - lam * problem.load)
    return lam, res


def kkt_floor(problem, alpha, value):
    """Residual level below which monotone descent cannot certify progress.

    Double-precision descent on a function of size |value| with gradient
    Lipschitz constant alpha ||a||^2 resolves decreases only down to machine
    noise in the value, which corresponds to a gradient norm of about
    sqrt(eps |value| alpha) ||a||.
    """
    lip = alpha * estimate_norm_a(problem) ** 2
    return 16.0 * math.sqrt(np.finfo(float).eps * max(abs(value), 1e-300) * lip)


def _clamp_jacobian_times(problem, z, Gd):
    """Derivative of the blockwise clamp at z, applied to the rows of Gd.

    On the smooth piece containing z the regularized support is quadratic;
    this is the curvature factor of that piece.
    """
    from .blocks import BALL, DEVIATORIC_BALL, FREE, INTERVAL, ZERO, \
        trace_direction

    out = Gd.copy()
    for b in problem.blocks:
        seg = z[b.start:b.stop]
        rows = out[b.start:b.stop]
        if b.kind == ZERO:
            rows[:] = 0.0
        elif b.kind == INTERVAL:
            clamped = (seg <= b.lo) | (seg >= b.hi)
            rows[clamped] = 0.0
        elif b.kind == BALL:
            nrm = float(np.linalg.norm(seg))
            if nrm > b.gamma:
                u = seg / nrm
                rows[:] = (b.gamma / nrm) * (rows - np.outer(u, u @ rows))
        elif b.kind == DEVIATORIC_BALL:
            t = trace_direction(b.dim)
            tr = float(seg @ t)
            dev = seg - tr * t
            nrm = float(np.linalg.norm(dev))
            tr_rows = np.outer(t, t @ rows)
            if nrm > b.gamma:
                dev_rows = rows - tr_rows
                u = dev / nrm
                dev_rows = (b.gamma / nrm) * (dev_rows - np.outer(u, u @ dev_rows))
                rows[:] = tr_rows + dev_rows
        # FREE: identity
    return out


def _newton_direction(problem, alpha, y, gw, others, piv):
    """Exact minimizer direction of the local quadratic piece, reduced to the
    load-slice coordinates."""
    Gd = problem._cache.get("dense_G")
    if Gd is None:
        Gd = problem.strain_map.toarray()
        problem._cache["dense_G"] = Gd
    z = alpha * (Gd @ y)
    DG = _clamp_jacobian_times(problem, z, Gd)
    H = alpha * (Gd.T @ (problem.x_weights[:, None] * DG))
    L = problem.load
    Zrow = -L[others] / L[piv]
    Hw = H[np.ix_(others, others)] \
        + np.outer(H[others, piv], Zrow) \
        + np.outer(Zrow, H[piv, others]) \
        + H[piv, piv] * np.outer(Zrow, Zrow)
    dw, *_ = np.linalg.lstsq(Hw, -gw, rcond=None)
    return dw


def solve_psi(problem, alpha, warm_start=None, tol=1e-9, max_iter=60000,
              stagnation_window=300):
    """Minimize J_alpha on the load-normalized slice L(y) = 1.

    Accepts once the M^-1-norm of grad - lambda L drops below
    max(tol, kkt_floor(alpha, value)); the floor keeps the acceptance
    reachable at large alpha, where rounding noise in the value caps the
    certifiable residual.  Iteration also ends when the value has stagnated
    at floating-point resolution for stagnation_window steps.  Raises
    ConvergenceError carrying the best record if neither happens within
    max_iter iterations.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    L = problem.load
    n = problem.n_y
    piv = int(np.argmax(np.abs(L)))
    others = np.array([i for i in range(n) if i != piv], dtype=int)

    def lift(wv):
        y = np.empty(n)
        y[others] = wv
        y[piv] = (1.0 - float(L[others] @ wv)) / L[piv]
        return y

    def reduce_grad(gy):
        return gy[others] - (L[others] / L[piv]) * gy[piv]

    if warm_start is not None:
        y0 = np.asarray(warm_start, float)
        w = y0[others].copy()
    else:
        w = np.zeros(n - 1)

    y = lift(w)
    f = eval_J_alpha(problem, alpha, y)
    g_full = grad_J_alpha(problem, alpha, y)
    lam, kkt = _multiplier_and_residual(problem, g_full)
    best = RegPathRecord(alpha, f, lam, y.copy(), kkt, 0)

    if n == 1:
        # singleton feasible set: nothing to optimize
        return best

    gw = reduce_grad(g_full)
    lip = max(alpha * estimate_norm_a(problem) ** 2, 1e-300)
    s_lo, s_hi = 1e-12 / lip, 1e12 / lip
    recent = [f]                                  # nonmonotone reference window
    tol_eff = max(tol, kkt_floor(problem, alpha, f))
    w_prev = gw_prev = None
    stalls = 0
    since_best = 0
    last_newton = 0

    for it in range(1, max_iter + 1):
        if kkt <= tol_eff:
            best.iterations = it - 1
            return best

        if w_prev is None:
            s = 1.0 / lip
        else:
            dw = w - w_prev
            dg = gw - gw_prev
            den = float(dw @ dg)
            s = float(dw @ dw) / den if den > 0 else s_hi
            s = min(max(s, s_lo), s_hi)

        w_prev, gw_prev = w, gw
        f_ref = max(recent)
        accepted = False
        for _ in range(40):
            wt = w - s * gw
            yt = lift(wt)
            ft = eval_J_alpha(problem, alpha, yt)
            if ft <= f_ref - 1e-4 * s * float(gw @ gw):
                accepted = True
                break
            s *= 0.5
        if not accepted:
            stalls += 1
            if stalls >= 2:
                break                     # no certifiable decrease left in f
            w_prev = gw_prev = None       # restart BB memory
            continue
        stalls = 0

        w, y, f = wt, yt, ft
        recent.append(f)
        if len(recent) > 10:
            recent.pop(0)
        g_full = grad_J_alpha(problem, alpha, y)
        gw = reduce_grad(g_full)
        lam, kkt = _multiplier_and_residual(problem, g_full)
        if f < best.psi - 1e-12 * max(abs(best.psi), 1e-300):
            since_best = 0
        else:
            since_best += 1
        if f <= best.psi:
            best = RegPathRecord(alpha, f, lam, y.copy(), kkt, it)
            tol_eff = max(tol, kkt_floor(problem, alpha, f))

        if since_best >= 40 and it - last_newton >= 40:
            # BB crawls on this piece: solve the local quadratic piece exactly
            last_newton = it
            dw = _newton_direction(problem, alpha, y, gw, others, piv)
            step = 1.0
            for _ in range(8):
                wn = w + step * dw
                yn = lift(wn)
                fn = eval_J_alpha(problem, alpha, yn)
                if fn < f:
                    w, y, f = wn, yn, fn
                    recent.append(f)
                    if len(recent) > 10:
                        recent.pop(0)
                    g_full = grad_J_alpha(problem, alpha, y)
                    gw = reduce_grad(g_full)
                    lam, kkt = _multiplier_and_residual(problem, g_full)
                    w_prev = gw_prev = None
                    if f < best.psi:
                        since_best = 0
                    if f <= best.psi:
                        best = RegPathRecord(alpha, f, lam, y.copy(), kkt, it)
                        tol_eff = max(tol, kkt_floor(problem, alpha, f))
                    break
                step *= 0.5

        if since_best >= stagnation_window:
            break                         # value pinned at machine resolution

    if best.kkt_residual <= tol_eff:
        return best
    best.converged = False
    raise ConvergenceError(
        f"solve_psi(alpha={alpha:g}): residual {best.kkt_residual:.3e} > "
        f"{tol_eff:g} after {best.iterations} iterations", best=best)


def run_alpha_continuation(problem, schedule, tol=1e-9, max_iter=60000,
                           parallel=False):
    """Sweep the schedule, warm-starting each step with the previous field.

    Per-step failures are recorded (converged=False) and the sweep continues.
    With parallel=True the steps run independently on a thread pool, without
    warm starts.
    """
    alphas = schedule.values()

    def run_one(alpha, warm):
        try:
            return solve_psi(problem, alpha, warm_start=warm,
                             tol=tol, max_iter=max_iter)
        except ConvergenceError as exc:
            rec = exc.best
            rec.converged = False
            return rec

    records = []
    if parallel:
        with ThreadPoolExecutor() as pool:
            records = list(pool.map(lambda a: run_one(a, None), alphas))
    else:
        warm = None
        for alpha in alphas:
            rec = run_one(alpha, warm)
            records.append(rec)
            warm = rec.y_alpha
            if (schedule.psi_increment_stop > 0 and len(records) >= 2
                    and abs(records[-1].psi - records[-2].psi)
                    < schedule.psi_increment_stop):
                break
    return records


def best_lower_bound(records):
    """Best certified lower bound over the converged steps of a sweep."""
    vals = [r.psi for r in records if r.converged]
    return max(vals) if vals else -math.inf


def records_to_rows(records):
    """Rows for the path.csv / path.dat outputs, one per schedule step."""
    return [(r.alpha, r.psi, r.lambda_alpha, r.kkt_residual, r.iterations)
            for r in records]
