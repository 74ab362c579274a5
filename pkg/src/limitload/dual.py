"""Dual-side machinery: support functional, residual norm, and bisection.

For a load multiplier lam >= 0, the equilibrium residual of a generalized
stress x is r(x) = G^T W x - lam L, and its Y*-norm

    Phi_lam(x) = sqrt(r^T M^-1 r)

measures how far x is from balancing the load lam L.  The value function
phi(lam) = inf over the admissible set of Phi_lam vanishes exactly up to the
critical multiplier, which bisect_zeta brackets by a doubling search plus
bisection on the predicate phi(lam) <= tol_phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError

DOM_TOL_FACTOR = 1e-10         # relative threshold deciding membership in dom J
RANK_TOL_FACTOR = 1e-12        # zero-row threshold relative to max |G| entry
SVD_NULL_RTOL = 1e-10          # relative singular-value threshold for null directions


def eval_support_J(problem, y, tol_dom=None):
    """Support functional J(y) = sup over admissible x of <x, Gy>_X.

    Returns +inf (as math.inf, by an explicit domain test, never by overflow)
    when the cone part of Gy is nonzero beyond tol_dom; the default tolerance
    is DOM_TOL_FACTOR times the X-norm of Gy.
    """
    y = np.asarray(y, float)
    if y.shape != (problem.n_y,):
        raise ValueError(f"y has length {y.size}, expected {problem.n_y}")
    g = problem.gy(y)
    viol = math.sqrt(max(problem.ops.cone_violation_sq(g), 0.0))
    if tol_dom is None:
        tol_dom = DOM_TOL_FACTOR * problem.x_norm(g)
    if viol > tol_dom:
        return math.inf
    return problem.ops.support_bounded(g)


def equilibrium_residual(problem, x, lam):
    """Residual vector G^T W x - lam L in Y* coordinates."""
    return problem.gt_w(x) - lam * problem.load


def eval_Phi_lambda(problem, x, lam):
    """Y*-dual norm of the equilibrium residual at load multiplier lam."""
    x = np.asarray(x, float)
    if x.shape != (problem.n_x,):
        raise ValueError(f"x has length {x.size}, expected {problem.n_x}")
    return problem.dual_norm(equilibrium_residual(problem, x, lam))


def _norm_a_cached(problem):
    from .certificates import estimate_norm_a
    return estimate_norm_a(problem)


def minimize_Phi(problem, lam, tol=1e-9, max_iter=20000, x0=None,
                 stagnation_window=250, stop_below=None, probe=None,
                 probe_every=25):
    """Minimize Phi_lam over the admissible set; returns (phi_value, x_opt).

    Works on the smooth convex surrogate f = Phi_lam^2 / 2 with a projected
    Barzilai-Borwein gradient method: spectral step, halving safeguard against
    the max of the last ten values (nonmonotone reference), BB memory restart
    when no step is accepted.  Stops once the unit-step projected gradient has
    X-norm <= tol or reaches the double-precision progress floor
    sqrt(2 eps f) ||a|| (the level below which no decrease of f is
    certifiable), whichever is larger; a stagnation exit returns the best
    iterate when the value stops improving.

    Two optional early exits serve predicate evaluations: stop_below returns
    as soon as Phi(x) <= stop_below (Phi overestimates the infimum, so this
    is conclusive), and probe(x, f, mr, it) is called every probe_every
    iterations with the current iterate, value and Y-representer M^-1 r; a
    True return aborts the iteration with the current point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    ops = problem.ops
    x = ops.project_set(np.zeros(problem.n_x) if x0 is None else np.asarray(x0, float))

    def evaluate(xv):
        r = equilibrium_residual(problem, xv, lam)
        mr = problem.m_solve(r)
        return 0.5 * float(r @ mr), mr

    eps = float(np.finfo(float).eps)
    f, mr = evaluate(x)
    best_f, best_x = f, x.copy()
    norm_a = _norm_a_cached(problem)
    lip = max(norm_a ** 2, 1e-300)
    s_lo, s_hi = 1e-10 / lip, 1e10 / lip
    recent = [f]                                  # nonmonotone reference window
    x_prev = g_prev = None
    stalls = 0
    since_best = 0

    def floor_tol(fv):
        return 16.0 * math.sqrt(2.0 * eps * max(fv, 0.0)) * max(norm_a, 1e-300)

    for it in range(1, max_iter + 1):
        if stop_below is not None and 2.0 * f <= stop_below * stop_below:
            return math.sqrt(max(2.0 * f, 0.0)), x
        if probe is not None and it % probe_every == 1 and probe(x, f, mr, it):
            return math.sqrt(max(2.0 * f, 0.0)), x
        g = problem.gy(mr)                       # gradient of f in the X metric
        pg = x - ops.project_set(x - g)
        if problem.x_norm(pg) <= max(tol, floor_tol(f)):
            phi = math.sqrt(max(2.0 * f, 0.0))
            return phi, x

        if x_prev is None:
            s = 1.0 / lip
        else:
            dx = x - x_prev
            dg = g - g_prev
            den = problem.x_inner(dx, dg)
            s = problem.x_inner(dx, dx) / den if den > 0 else s_hi
            s = min(max(s, s_lo), s_hi)

        x_prev, g_prev = x, g
        f_ref = max(recent)
        accepted = False
        for _ in range(40):
            xt = ops.project_set(x - s * g)
            step_sq = problem.x_inner(xt - x, xt - x)
            if step_sq == 0.0:
                # the negative gradient lies in the normal cone: stationary
                phi = math.sqrt(max(2.0 * f, 0.0))
                return phi, x
            ft, mrt = evaluate(xt)
            if ft <= f_ref - 1e-4 * step_sq / s:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            # decrease below floating-point resolution of f: numerical floor
            stalls += 1
            if stalls >= 2:
                phi = math.sqrt(max(2.0 * best_f, 0.0))
                return phi, best_x
            x_prev = g_prev = None               # restart BB memory
            continue
        stalls = 0
        x, f, mr = xt, ft, mrt
        recent.append(f)
        if len(recent) > 10:
            recent.pop(0)
        if f < best_f - 1e-12 * max(abs(best_f), 1e-300):
            since_best = 0
        else:
            since_best += 1
        if f < best_f:
            best_f, best_x = f, x.copy()
        if since_best >= stagnation_window:
            phi = math.sqrt(max(2.0 * best_f, 0.0))
            return phi, best_x

    phi = math.sqrt(max(2.0 * best_f, 0.0))
    raise ConvergenceError(
        f"minimize_Phi: projected gradient not below {tol} after {max_iter} iterations",
        best=(phi, best_x))


def finite_support_projector(problem):
    """Basis of the finite-support cone (a subspace for these block kinds)
    plus cached factors for M-orthogonal projection onto it.

    Returns (N, gram_cho, MN, GN, LN); N may have zero columns when the cone
    is trivial.  Cached on the problem instance.
    """
    cached = problem._cache.get("dom_proj")
    if cached is not None:
        return cached
    C, _, _ = problem.ops.cone_basis()
    if C.shape[1]:
        rows = (problem._Gt @ C).T                # conditions c^T (G y) = 0
        N = sla.null_space(rows)
    else:
        N = np.eye(problem.n_y)
    if N.shape[1]:
        if problem.y_gram is None:
            gram = N.T @ N
            MN = N
        else:
            MN = problem.y_gram @ N
            gram = N.T @ MN
        gram_cho = sla.cho_factor(gram, lower=True)
        GN = np.asarray(problem.strain_map @ N)
        LN = problem.load @ N
        cached = (N, gram_cho, MN, GN, LN)
    else:
        cached = (N, None, None, None, None)
    problem._cache["dom_proj"] = cached
    return cached


def _infeasibility_certificate(problem, lam, mr, tol_phi):
    """True when a finite-support field certifies phi(lam) > tol_phi.

    By the primal identity phi(lam)^2 = -2 min { ||y||^2/2 + J(y) - lam L(y) },
    any finite-support y with value below -tol_phi^2/2 (minus a rounding
    margin) is conclusive.  The candidate is the M-projection of the current
    residual representer onto the finite-support cone.
    """
    N, gram_cho, MN, GN, LN = finite_support_projector(problem)
    if gram_cho is None:
        return False
    z = -sla.cho_solve(gram_cho, MN.T @ mr)
    quad = 0.5 * float(z @ (MN.T @ (N @ z)))
    sup = problem.ops.support_bounded(GN @ z)
    lin = lam * float(LN @ z)
    q = quad + sup - lin
    margin = 1e3 * np.finfo(float).eps * (abs(quad) + abs(sup) + abs(lin) + 1.0)
    return q < -0.5 * tol_phi * tol_phi - margin


def _feasibility_certificate(problem, lam, f, mr, tol_phi):
    """True when rescaling the iterate certifies phi(lam) <= tol_phi.

    The current admissible x nearly balances the load factor
    mu = lam + <M^-1 r, L> / (L^T M^-1 L); when mu >= lam, the scaled stress
    (lam/mu) x stays admissible (the blocks are star-shaped around zero) and
    its residual is (lam/mu) times the residual at mu.
    """
    cached = problem._cache.get("minv_load")
    if cached is None:
        minv_l = problem.m_solve(problem.load)
        cached = (minv_l, float(problem.load @ minv_l))
        problem._cache["minv_load"] = cached
    _, ll = cached
    shift = float(mr @ problem.load) / ll
    mu = lam + shift
    if mu < lam or mu <= 0.0:
        return False
    rho_sq = max(2.0 * f - shift * shift * ll, 0.0)
    return (lam / mu) * math.sqrt(rho_sq) <= tol_phi


def _whitened_adjoint(problem):
    """Dense whitened pairing A = M^{-1/2} G^T W and target b = M^{-1/2} L."""
    cached = problem._cache.get("whitened_adjoint")
    if cached is None:
        A = problem.strain_map.toarray().T * problem.x_weights[None, :]
        Lw = problem.m_whitener()
        if Lw is not None:
            A = sla.solve_triangular(Lw, A, lower=True)
            b = sla.solve_triangular(Lw, problem.load, lower=True)
        else:
            b = problem.load.astype(float)
        cached = (A, b)
        problem._cache["whitened_adjoint"] = cached
    return cached


def _polish_equilibrium(problem, lam, x, rounds=4, act_tol=1e-9):
    """Gauss-Newton refinement of the residual norm on the active manifold.

    Projected-gradient iterates crawl along curved active ball boundaries
    near the critical multiplier; a few equality-constrained least-squares
    steps on the identified active set (ball saturations as linearized
    tangent constraints, interval coordinates pinned at their bounds)
    restore fast local convergence.  Best-effort: steps are projected back
    onto the admissible set and accepted only if the value decreases.
    """
    from .blocks import BALL, DEVIATORIC_BALL, INTERVAL, ZERO, trace_direction

    A, b = _whitened_adjoint(problem)
    target = lam * b
    ops = problem.ops

    def value(xv):
        e = A @ xv - target
        return 0.5 * float(e @ e)

    x = ops.project_set(np.asarray(x, float))
    f = value(x)
    big = 1e8 * (np.max(np.abs(A)) + 1.0)
    for _ in range(rounds):
        pinned = np.zeros(problem.n_x, dtype=bool)
        c_rows, c_rhs = [], []
        for blk in problem.blocks:
            seg = x[blk.start:blk.stop]
            if blk.kind == ZERO:
                pinned[blk.start:blk.stop] = True
            elif blk.kind == INTERVAL:
                span = max(blk.hi - blk.lo, 1.0)
                at = (np.abs(seg - blk.lo) <= act_tol * span) | \
                     (np.abs(seg - blk.hi) <= act_tol * span)
                pinned[blk.start:blk.stop][at] = True
            elif blk.kind == BALL:
                nrm = float(np.linalg.norm(seg))
                if nrm >= blk.gamma * (1.0 - act_tol) and nrm > 0:
                    row = np.zeros(problem.n_x)
                    row[blk.start:blk.stop] = seg / nrm
                    c_rows.append(row)
                    c_rhs.append(blk.gamma - nrm)
            elif blk.kind == DEVIATORIC_BALL:
                t = trace_direction(blk.dim)
                dev = seg - float(seg @ t) * t
                nrm = float(np.linalg.norm(dev))
                if nrm >= blk.gamma * (1.0 - act_tol) and nrm > 0:
                    row = np.zeros(problem.n_x)
                    row[blk.start:blk.stop] = dev / nrm
                    c_rows.append(row)
                    c_rhs.append(blk.gamma - nrm)
        cols = np.where(~pinned)[0]
        resid = A @ x - target
        stacked = A[:, cols]
        rhs = -resid
        if c_rows:
            C = np.vstack(c_rows)[:, cols]
            stacked = np.vstack([stacked, big * C])
            rhs = np.concatenate([rhs, big * np.asarray(c_rhs)])
        dx_cols, *_ = np.linalg.lstsq(stacked, rhs, rcond=None)
        dx = np.zeros(problem.n_x)
        dx[cols] = dx_cols
        improved = False
        step = 1.0
        for _ in range(8):
            xt = ops.project_set(x + step * dx)
            ft = value(xt)
            if ft < f:
                x, f = xt, ft
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return x


def _phi_above(problem, lam, tol_phi, warm, inner_tol, inner_max_iter):
    """Decide the bisection predicate phi(lam) > tol_phi; returns (bool, x).

    Conclusive exits: an admissible point with Phi <= tol_phi or a successful
    scaling certificate (feasible side), or a finite-support field pushing
    the primal-identity value below -tol_phi^2/2 (infeasible side).  If the
    projected-gradient solver exits without either certificate, the iterate
    is polished by active-manifold least squares and both certificates are
    re-examined; only then does the best value decide.
    """
    verdict = []

    def probe(x, f, mr, it):
        if _feasibility_certificate(problem, lam, f, mr, tol_phi):
            verdict.append(False)
            return True
        if _infeasibility_certificate(problem, lam, mr, tol_phi):
            verdict.append(True)
            return True
        return False

    def examine(xv):
        r = equilibrium_residual(problem, xv, lam)
        mr = problem.m_solve(r)
        f = 0.5 * float(r @ mr)
        if 2.0 * f <= tol_phi * tol_phi:
            return False
        if _feasibility_certificate(problem, lam, f, mr, tol_phi):
            return False
        if _infeasibility_certificate(problem, lam, mr, tol_phi):
            return True
        return None

    x_cur = None
    if warm is not None:
        x_ws, lam_ws = warm
        # a stress balancing lam_ws L nearly balances lam L after rescaling
        x_cur = x_ws * (lam / lam_ws) if lam_ws > 0 else x_ws

    budget = inner_max_iter
    phi_prev = math.inf
    phi = math.inf
    while budget > 0:
        leg = min(1500, budget)
        budget -= leg
        try:
            phi, x_cur = minimize_Phi(problem, lam, tol=inner_tol,
                                      max_iter=leg, x0=x_cur,
                                      stop_below=tol_phi, probe=probe)
        except ConvergenceError as exc:
            phi, x_cur = exc.best
        if verdict:
            return verdict[0], x_cur
        got = examine(x_cur)
        if got is not None:
            return got, x_cur
        x_new = _polish_equilibrium(problem, lam, x_cur)
        got = examine(x_new)
        if got is not None:
            return got, x_new
        phi_new = eval_Phi_lambda(problem, x_new, lam)
        if phi_new < phi:
            phi, x_cur = phi_new, x_new
        if phi >= phi_prev * (1.0 - 1e-6):
            break                         # neither leg nor polish is progressing
        phi_prev = phi
    return phi > tol_phi, x_cur


@dataclass
class BisectResult:
    zeta: float
    bracket_lo: float
    bracket_hi: float
    evaluations: int
    capped: bool = False
    message: str = ""


def bisect_zeta(problem, lambda_hi_seed=1.0, tol_lambda=1e-6, tol_phi=None,
                cap_factor=1e6, inner_tol=None, inner_max_iter=50000,
                full_output=False):
    """Critical multiplier by doubling plus bisection on phi(lam) <= tol_phi.

    tol_phi defaults to 1e-8 times the Y*-norm of the load so the predicate is
    scale invariant.  If the doubling phase exceeds cap_factor times the seed
    without finding phi above threshold, the value is declared +inf and the
    result flagged "unbounded or cap too low".
    """
    if tol_lambda <= 0 or lambda_hi_seed <= 0:
        raise ValueError("tol_lambda and lambda_hi_seed must be positive")
    load_dual = problem.dual_norm(problem.load)
    if tol_phi is None:
        tol_phi = 1e-8 * load_dual
    if inner_tol is None:
        inner_tol = max(1e-3 * tol_phi, 1e-14 * max(load_dual, 1.0))

    evals = 0
    warm = None
    lam_lo = 0.0                                  # phi(0) = 0 since 0 is admissible
    lam = lambda_hi_seed
    cap = lambda_hi_seed * cap_factor
    lam_hi = None
    while True:
        above, x_last = _phi_above(problem, lam, tol_phi, warm,
                                   inner_tol, inner_max_iter)
        evals += 1
        if above:
            lam_hi = lam
            break
        warm = (x_last, lam)                      # feasible point at lam
        lam_lo = lam
        lam = 2.0 * lam
        if lam > cap:
            res = BisectResult(math.inf, lam_lo, math.inf, evals, capped=True,
                               message="unbounded or cap too low")
            return res if full_output else res.zeta

    while lam_hi - lam_lo > tol_lambda:
        mid = 0.5 * (lam_lo + lam_hi)
        above, x_last = _phi_above(problem, mid, tol_phi, warm,
                                   inner_tol, inner_max_iter)
        evals += 1
        if above:
            lam_hi = mid
        else:
            warm = (x_last, mid)
            lam_lo = mid

    res = BisectResult(0.5 * (lam_lo + lam_hi), lam_lo, lam_hi, evals)
    return res if full_output else res.zeta


@dataclass
class NullSpaceInfo:
    """Cone directions unreachable through the pairing map.

    ``dead_blocks`` lists indices of cone-side blocks all of whose directions
    correspond to zero rows of G; ``null_dim`` counts every unreachable
    direction found by singular value decomposition, with ``basis`` holding
    the corresponding coefficient vectors in the cone-direction basis (one
    column per direction, labelled by ``labels``).
    """

    dead_blocks: list
    null_dim: int
    basis: np.ndarray
    labels: list
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))


def cone_map_whitened(problem):
    """Whitened cone pairing matrix and metadata.

    Returns (A, w_c, labels) with A = M^{-1/2} G^T W C diag(w_c^{-1/2}) so
    that singular values of A are exactly the stability quotients
    ||G^T W x||_{M^-1} / ||x||_W over the cone subspace.
    """
    C, w_c, labels = problem.ops.cone_basis()
    if C.shape[1] == 0:
        return np.zeros((problem.n_y, 0)), w_c, labels
    B = problem._Gt @ (problem.x_weights[:, None] * C)
    Lw = problem.m_whitener()
    if Lw is not None:
        B = sla.solve_triangular(Lw, B, lower=True)
    return B / np.sqrt(w_c)[None, :], w_c, labels


def detect_null_blocks(problem, tol_rank=None):
    """Identify cone directions in the cokernel of the pairing map.

    Dead blocks come from rows of G that vanish below tol_rank (default
    RANK_TOL_FACTOR times the largest |G| entry).  The full unreachable
    subspace, including non-coordinate directions such as a constant-pressure
    mode, is read off the singular value decomposition of the whitened cone
    map; these directions are excluded from stability-constant estimation.
    """
    C, w_c, labels = problem.ops.cone_basis()
    n_c = C.shape[1]
    if n_c == 0:
        return NullSpaceInfo([], 0, np.zeros((0, 0)), [])

    G = problem.strain_map
    g_max = float(np.max(np.abs(G.data))) if G.nnz else 0.0
    if tol_rank is None:
        tol_rank = RANK_TOL_FACTOR * g_max

    # coordinate-level test: a direction is dead when its combination of G
    # rows vanishes identically
    raw = (problem._Gt @ C)                       # n_y x n_c, no weights
    col_max = np.max(np.abs(raw), axis=0) if raw.size else np.zeros(n_c)
    dead_dir = col_max <= tol_rank
    dead_blocks = []
    for bi in sorted({b for b, _ in labels}):
        cols = [k for k, (b, _) in enumerate(labels) if b == bi]
        if cols and all(dead_dir[k] for k in cols):
            dead_blocks.append(bi)

    A, _, _ = cone_map_whitened(problem)
    svals = sla.svd(A, compute_uv=False) if min(A.shape) else np.zeros(0)
    _, _, vt = sla.svd(A, full_matrices=True) if A.size else (None, None, np.eye(n_c))
    smax = float(svals[0]) if svals.size else 0.0
    thresh = max(SVD_NULL_RTOL * smax, tol_rank)
    null_rows = [k for k in range(n_c)
                 if k >= svals.size or svals[k] <= thresh]
    basis = vt[null_rows].T if null_rows else np.zeros((n_c, 0))
    # map whitened right-singular vectors back to cone-basis coefficients
    if basis.size:
        basis = basis / np.sqrt(w_c)[:, None]
        basis /= np.linalg.norm(basis, axis=0, keepdims=True)
    return NullSpaceInfo(dead_blocks, len(null_rows), basis, labels,
                         singular_values=svals)


@dataclass
class BoundsReport:
    """Lower/upper enclosure of the critical multiplier for one instance."""

    lower: float
    upper: float
    zeta_bisect: float
    tol_lambda: float
    tol_phi: float
    capped: bool = False

    def to_dict(self):
        def enc(v):
            return "inf" if (isinstance(v, float) and math.isinf(v)) else v
        return {
            "lower": enc(self.lower),
            "upper": enc(self.upper),
            "zeta_bisect": enc(self.zeta_bisect),
            "tol_lambda": self.tol_lambda,
            "tol_phi": self.tol_phi,
            "capped": self.capped,
        }
