"""Brute-force reference computations on tiny instances.

Everything here re-derives the block formulas from the raw problem data and
shares no code with the main solvers, so that oracle/solver agreement is a
genuine cross-check.  Hard caps: at most 3 Y-coefficients and 4 X-coefficients.

brute_zeta        grid search of the support functional on the load slice
brute_lambda      feasibility sweep of the equilibrium inclusion over a
                  dense sample of the admissible set (angular sampling of
                  ball directions, exact box least squares per direction)
brute_phi_primal  grid minimization behind the identity
                  phi(lam)^2 = -2 min { ||y||^2/2 + J(y) - lam L(y) }
verify_no_gap     compares the two critical values and tags which duality
                  hypothesis the instance satisfies
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .blocks import BALL, DEVIATORIC_BALL, FREE, INTERVAL

DIM_Y_CAP = 3
DIM_X_CAP = 4


def _check_caps(problem, need_x=True, need_y=True):
    if need_y and problem.n_y > DIM_Y_CAP:
        raise ValueError(f"oracle dimension cap: n_y={problem.n_y} > {DIM_Y_CAP}")
    if need_x and problem.n_x > DIM_X_CAP:
        raise ValueError(f"oracle dimension cap: n_x={problem.n_x} > {DIM_X_CAP}")


def _trace_axis(dim):
    t = np.zeros(dim * (dim + 1) // 2)
    t[:dim] = 1.0 / math.sqrt(dim)
    return t


def _dom_condition_rows(problem):
    """Rows of the linear system cutting out the finite-support cone."""
    Gd = problem.strain_map.toarray()
    rows = []
    for b in problem.blocks:
        if b.kind == FREE:
            rows.extend(Gd[i] for i in range(b.start, b.stop))
        elif b.kind == DEVIATORIC_BALL:
            rows.append(_trace_axis(b.dim) @ Gd[b.start:b.stop])
    if rows:
        return np.vstack(rows)
    return np.zeros((0, problem.n_y))


def _bounded_support_batch(problem, Gys):
    """Support of the bounded parts at columns of Gys (n_x, k)."""
    w = problem.x_weights
    vals = np.zeros(Gys.shape[1])
    for b in problem.blocks:
        seg = Gys[b.start:b.stop]
        if b.kind == BALL:
            vals += b.gamma * w[b.start] * np.sqrt((seg * seg).sum(axis=0))
        elif b.kind == DEVIATORIC_BALL:
            d = b.dim
            tr = seg[:d].sum(axis=0) / d
            dev = seg.copy()
            dev[:d] -= tr
            vals += b.gamma * w[b.start] * np.sqrt((dev * dev).sum(axis=0))
        elif b.kind == INTERVAL:
            wi = w[b.start:b.stop, None]
            vals += (wi * (b.hi * np.maximum(seg, 0.0)
                          + b.lo * np.minimum(seg, 0.0))).sum(axis=0)
    return vals


def _grid_minimize(fun, dim, radius, step, refinements, refine_factor=32.0,
                   chunk=200_000):
    """Deterministic grid search with shrinking refinement around the incumbent."""
    center = np.zeros(dim)
    h, R = step, radius
    best_w, best_v = np.zeros(dim), math.inf
    for _ in range(refinements + 1):
        axes = [center[i] + np.arange(-R, R + 0.5 * h, h) for i in range(dim)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        for lo in range(0, pts.shape[0], chunk):
            sub = pts[lo:lo + chunk]
            vals = fun(sub)
            k = int(np.argmin(vals))
            if vals[k] < best_v:
                best_v = float(vals[k])
                best_w = sub[k].copy()
        center = best_w
        R = 1.5 * h
        h = h / refine_factor
    return best_v, best_w


def brute_zeta(problem, grid_radius=4.0, grid_step=0.05, refinements=2,
               full_output=False):
    """Grid-minimize the support functional over the slice L(y) = 1.

    Parameterizes the finite-support cone exactly (it is a subspace for the
    supported block kinds), then searches the affine slice; refines the grid
    around the incumbent.  Returns +inf flagged "grid exhausted" when the
    slice does not meet the cone.
    """
    _check_caps(problem, need_x=False)
    A = _dom_condition_rows(problem)
    if A.shape[0]:
        Bd = sla.null_space(A)
    else:
        Bd = np.eye(problem.n_y)
    L = problem.load
    if Bd.shape[1] == 0:
        out = (math.inf, None, True)
        return out if full_output else out[0]
    c = Bd.T @ L
    cn = float(c @ c)
    if cn <= 1e-24 * max(float(L @ L), 1.0):
        out = (math.inf, None, True)
        return out if full_output else out[0]
    u0 = c / cn
    y0 = Bd @ u0
    Np = sla.null_space(c[None, :])
    P = Bd @ Np
    Gd = problem.strain_map.toarray()

    if P.shape[1] == 0:
        g = Gd @ y0
        val = float(_bounded_support_batch(problem, g[:, None])[0])
        out = (val, y0, False)
        return out if full_output else out[0]

    g0 = Gd @ y0
    GP = Gd @ P

    def fun(W):
        Gys = g0[:, None] + GP @ W.T
        return _bounded_support_batch(problem, Gys)

    val, w_best = _grid_minimize(fun, P.shape[1], grid_radius, grid_step,
                                 refinements)
    y_best = y0 + P @ w_best
    out = (val, y_best, False)
    return out if full_output else out[0]


def brute_phi_primal(problem, lam, grid_radius=6.0, grid_step=None,
                     refinements=2):
    """sqrt(-2 min over finite-support y of ||y||^2/2 + J(y) - lam L(y))."""
    _check_caps(problem, need_x=False)
    A = _dom_condition_rows(problem)
    Bd = sla.null_space(A) if A.shape[0] else np.eye(problem.n_y)
    if Bd.shape[1] == 0:
        return 0.0                                 # cone is {0}; minimum is 0
    dim = Bd.shape[1]
    if grid_step is None:
        grid_step = 0.05 if dim <= 2 else 0.125
    Gd = problem.strain_map.toarray()
    GB = Gd @ Bd
    LB = problem.load @ Bd
    if problem.y_gram is None:
        MB = Bd.T @ Bd
    else:
        MB = Bd.T @ problem.y_gram @ Bd

    def fun(W):
        quad = 0.5 * np.einsum("ki,ij,kj->k", W, MB, W)
        lin = W @ LB
        sup = _bounded_support_batch(problem, GB @ W.T)
        return quad + sup - lam * lin

    mval, _ = _grid_minimize(fun, dim, grid_radius, grid_step, refinements)
    if mval > 1e-9:
        raise AssertionError(
            f"primal oracle found positive minimum {mval:.3e}; the origin "
            "should give a nonpositive value")
    return math.sqrt(max(-2.0 * mval, 0.0))


# -- dual feasibility sweep ---------------------------------------------------


def _unit_circle(n):
    th = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    return np.column_stack([np.cos(th), np.sin(th)]), th


class _FeasibilityOracle:
    """Residual of the equilibrium inclusion over a sampled admissible set."""

    def __init__(self, problem):
        _check_caps(problem)
        self.problem = problem
        Gt = problem.strain_map.toarray().T * problem.x_weights[None, :]
        Lw = problem.m_whitener()
        if Lw is not None:
            Gt = sla.solve_triangular(Lw, Gt, lower=True)
            self.bL = sla.solve_triangular(Lw, problem.load, lower=True)
        else:
            self.bL = problem.load.astype(float)
        self.S = Gt                                  # residual = ||S x - lam bL||

        # fixed-direction bounded variables and free directions
        self.fixed_cols, self.fixed_bounds = [], []
        self.free_cols = []
        self.angular = []                            # (cols_fun, gamma)
        n_x = problem.n_x
        for b in problem.blocks:
            e = np.zeros(n_x)
            if b.kind == INTERVAL:
                for i in range(b.start, b.stop):
                    ei = e.copy(); ei[i] = 1.0
                    self.fixed_cols.append(self.S @ ei)
                    self.fixed_bounds.append((b.lo, b.hi))
            elif b.kind == BALL:
                if b.size == 1:
                    ei = e.copy(); ei[b.start] = 1.0
                    self.fixed_cols.append(self.S @ ei)
                    self.fixed_bounds.append((-b.gamma, b.gamma))
                elif b.size == 2:
                    s = b.start

                    def cols(theta, s=s):
                        d = np.zeros(n_x)
                        d[s], d[s + 1] = math.cos(theta), math.sin(theta)
                        return self.S @ d

                    self.angular.append((cols, b.gamma))
                else:
                    raise NotImplementedError(
                        "oracle supports ball blocks of size 1 or 2 only")
            elif b.kind == DEVIATORIC_BALL:
                if b.dim != 2:
                    raise NotImplementedError("oracle handles dim-2 deviator balls")
                s = b.start
                d1 = np.zeros(n_x); d1[s], d1[s + 1] = 1 / math.sqrt(2), -1 / math.sqrt(2)
                d2 = np.zeros(n_x); d2[s + 2] = 1.0

                def cols(theta, Sd1=self.S @ d1, Sd2=self.S @ d2):
                    return math.cos(theta) * Sd1 + math.sin(theta) * Sd2

                self.angular.append((cols, b.gamma))
                t = np.zeros(n_x)
                t[s:s + 3] = _trace_axis(2)
                self.free_cols.append(self.S @ t)
            elif b.kind == FREE:
                for i in range(b.start, b.stop):
                    ei = e.copy(); ei[i] = 1.0
                    self.free_cols.append(self.S @ ei)
            # ZERO blocks contribute nothing

    def residuals(self, lam_grid, thetas_per_block):
        """Min squared residual per grid multiplier over the sampled set."""
        lam_grid = np.asarray(lam_grid, float)
        best = np.full(lam_grid.size, math.inf)
        n_fixed = len(self.fixed_cols)
        theta_sets = [np.atleast_1d(t) for t in thetas_per_block]
        for combo in itertools.product(*theta_sets) if theta_sets else [()]:
            cols, bounds = list(self.fixed_cols), list(self.fixed_bounds)
            for (fun, gamma), th in zip(self.angular, combo):
                cols.append(fun(float(th)))
                bounds.append((0.0, gamma))
            ncols = cols + self.free_cols
            A = np.column_stack(ncols) if ncols else np.zeros((self.bL.size, 0))
            nb = len(bounds)
            self._sweep_active_sets(A, nb, bounds, lam_grid, best)
        return best

    def _sweep_active_sets(self, A, nb, bounds, lam_grid, best):
        nfree_tail = A.shape[1] - nb
        for states in itertools.product((0, 1, 2), repeat=nb):
            free_idx = [k for k in range(nb) if states[k] == 0]
            free_idx += list(range(nb, nb + nfree_tail))
            c0 = np.zeros(self.bL.size)
            for k in range(nb):
                if states[k] == 1:
                    c0 += bounds[k][0] * A[:, k]
                elif states[k] == 2:
                    c0 += bounds[k][1] * A[:, k]
            Af = A[:, free_idx] if free_idx else np.zeros((self.bL.size, 0))
            if Af.shape[1]:
                p1, *_ = np.linalg.lstsq(Af, self.bL, rcond=None)
                p0, *_ = np.linalg.lstsq(Af, c0, rcond=None)
                e1 = Af @ p1 - self.bL
                e0 = c0 - Af @ p0
            else:
                p1 = p0 = np.zeros(0)
                e1, e0 = -self.bL, c0.copy()
            # feasibility window of the interior variables (linear in lam)
            lo_lam, hi_lam = 0.0, math.inf
            ok = True
            for pos, k in enumerate(free_idx):
                if k >= nb:
                    continue
                a, bq = p1[pos], -p0[pos]
                lo, hi = bounds[k]
                slack = 1e-12 * max(abs(lo), abs(hi), 1.0)
                if abs(a) <= 1e-14:
                    if not (lo - slack <= bq <= hi + slack):
                        ok = False
                        break
                elif a > 0:
                    lo_lam = max(lo_lam, (lo - slack - bq) / a)
                    hi_lam = min(hi_lam, (hi + slack - bq) / a)
                else:
                    lo_lam = max(lo_lam, (hi + slack - bq) / a)
                    hi_lam = min(hi_lam, (lo - slack - bq) / a)
            if not ok or lo_lam > hi_lam:
                continue
            r2 = ((e1 @ e1) * lam_grid * lam_grid
                  + 2.0 * (e1 @ e0) * lam_grid + (e0 @ e0))
            mask = (lam_grid >= lo_lam - 1e-15) & (lam_grid <= hi_lam + 1e-15)
            np.minimum(best, np.where(mask, r2, math.inf), out=best)


def brute_lambda(problem, lambda_grid, feas_tol=1e-6, n_dirs=48,
                 theta_refinements=2):
    """Largest grid multiplier whose load is balanced by an admissible stress.

    Ball-type blocks are sampled over directions (with local angular
    refinement around the best direction); for each sampled direction the
    remaining box-constrained least squares is solved exactly by active-set
    enumeration, with the unbounded parts handled in closed form.
    """
    oracle = _FeasibilityOracle(problem)
    lam_grid = np.asarray(lambda_grid, float)
    n_ang = len(oracle.angular)
    if n_ang == 0:
        r2 = oracle.residuals(lam_grid, [])
        feas = lam_grid[r2 <= feas_tol ** 2]
        return float(feas.max()) if feas.size else 0.0

    _, th0 = _unit_circle(n_dirs)
    theta_sets = [th0.copy() for _ in range(n_ang)]
    width = 2.0 * math.pi / n_dirs
    best_overall = np.full(lam_grid.size, math.inf)
    for round_i in range(theta_refinements + 1):
        r2 = oracle.residuals(lam_grid, theta_sets)
        np.minimum(best_overall, r2, out=best_overall)
        if round_i == theta_refinements:
            break
        feas = np.where(best_overall <= feas_tol ** 2)[0]
        lam_best = lam_grid[feas.max()] if feas.size else lam_grid[0]
        # recenter every angular grid on its best direction at lam_best
        new_sets = []
        for bi in range(n_ang):
            probe = [np.array([0.0]) for _ in range(n_ang)]
            best_th, best_val = 0.0, math.inf
            for th in theta_sets[bi]:
                probe[bi] = np.array([th])
                others = [ts if i != bi else probe[bi]
                          for i, ts in enumerate(theta_sets)]
                v = oracle.residuals(np.array([lam_best]), others)[0]
                if v < best_val:
                    best_val, best_th = v, float(th)
            new_sets.append(best_th + np.linspace(-width, width, 17))
        theta_sets = new_sets
        width = width / 8.0
    feas = lam_grid[best_overall <= feas_tol ** 2]
    return float(feas.max()) if feas.size else 0.0


@dataclass
class NoGapReport:
    lambda_star: float
    zeta_star: float
    gap: float
    tolerance: float
    hypothesis: str
    ok: bool
    detail: dict = field(default_factory=dict)


def verify_no_gap(problem, tol=1e-4, grid_radius=4.0, feas_tol=1e-6):
    """Both critical values by independent brute force, and their gap."""
    _check_caps(problem)
    zeta = brute_zeta(problem, grid_radius=grid_radius)

    hi = 1.25 * zeta + 0.5 if math.isfinite(zeta) else 1.0e4
    grid = np.linspace(0.0, hi, 61)
    lam = brute_lambda(problem, grid, feas_tol=feas_tol)
    delta = hi / 60.0
    for _ in range(2):
        lo = max(lam - delta, 0.0)
        grid = np.linspace(lo, lam + delta, 81)
        lam = brute_lambda(problem, grid, feas_tol=feas_tol)
        delta = 2.0 * delta / 80.0

    unbounded = (not math.isfinite(zeta)) and lam >= hi * (1.0 - 1e-9)
    if unbounded:
        lam_eff, gap = math.inf, 0.0
    else:
        lam_eff = lam
        gap = abs(lam - zeta) if math.isfinite(zeta) else math.inf

    bounded = all(b.is_bounded for b in problem.blocks)
    hypothesis = "bounded admissible set" if bounded else "cone split"
    if not bounded:
        A = _dom_condition_rows(problem)
        C_dirs = []
        n_x = problem.n_x
        Gt = problem.strain_map.toarray().T
        for b in problem.blocks:
            if b.kind == FREE:
                for i in range(b.start, b.stop):
                    C_dirs.append(Gt[:, i])
            elif b.kind == DEVIATORIC_BALL:
                C_dirs.append(Gt[:, b.start:b.stop] @ _trace_axis(b.dim))
        Cmat = np.column_stack(C_dirs) if C_dirs else np.zeros((problem.n_y, 0))
        if Cmat.shape[1]:
            sv = sla.svd(Cmat, compute_uv=False)
            if sv.size == 0 or sv.min() <= 1e-10 * max(sv.max(), 1.0):
                hypothesis += " + quotient"
    ok = gap <= tol
    return NoGapReport(lam_eff, zeta, gap, tol, hypothesis, ok,
                       detail={"lambda_grid_hi": hi, "feas_tol": feas_tol})
