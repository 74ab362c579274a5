"""Upper-bound certificates for the critical multiplier.

For a trial field y the bound reads

    (J_A(y) + rho_A * C_star * ||a|| * ||Pi_C y||)
    -----------------------------------------------
    (L(y)  -  C_star * ||Pi_C y|| * ||L||_{Y*})

and is valid whenever the denominator is positive.  J_A is the support of the
bounded part of the admissible set, ||Pi_C y|| measures the distance of y from
the cone of fields with finite support value, rho_A bounds the X-norm over the
bounded part, and C_star is the reciprocal of the cone inf-sup constant.

A discrete C_star estimated from the assembled matrices does not bound the
continuum constant; certificates therefore carry a provenance tag and callers
should prefer a user-supplied continuum value when one is known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .dual import cone_map_whitened, SVD_NULL_RTOL
from .errors import ConvergenceError, InfSupDegenerateError


def estimate_norm_a(problem, tol=1e-8, max_iter=5000):
    """Operator norm of the pairing: largest stability quotient over all of X.

    Power iteration on the pencil (G^T W G, M), deterministic start, cached on
    the problem instance.  Converges to 1e-8 relative by default.
    """
    cached = problem._cache.get("norm_a")
    if cached is not None:
        return cached
    n = problem.n_y
    v = np.ones(n) + np.linspace(0.0, 0.1, n)
    v /= problem.y_norm(v)
    rho_prev = 0.0
    for _ in range(max_iter):
        gv = problem.gy(v)
        u = problem.m_solve(problem.gt_w(gv))
        rho = problem.x_inner(gv, gv)             # v already M-normalized
        nu = problem.y_norm(u)
        if nu == 0.0:
            rho = 0.0
            break
        v = u / nu
        if abs(rho - rho_prev) <= tol * max(rho, 1e-300):
            break
        rho_prev = rho
    else:
        raise ConvergenceError(
            f"estimate_norm_a: power iteration not converged in {max_iter} steps",
            best=math.sqrt(max(rho, 0.0)))
    val = math.sqrt(max(rho, 0.0))
    problem._cache["norm_a"] = val
    return val


def estimate_norm_L_dual(problem):
    """Y*-norm of the load, sqrt(L^T M^-1 L)."""
    cached = problem._cache.get("norm_L_dual")
    if cached is not None:
        return cached
    val = problem.dual_norm(problem.load)
    problem._cache["norm_L_dual"] = val
    return val


def estimate_C_star_discrete(problem, full_output=False):
    """Reciprocal of the smallest nonzero singular value of the cone map.

    Dense decomposition of the whitened cone pairing matrix; unreachable
    directions (identified as in detect_null_blocks) are dropped, realizing
    the quotient reduction.  The estimate is tagged non-rigorous for the
    underlying continuum problem.
    """
    A, _, _ = cone_map_whitened(problem)
    if A.shape[1] == 0:
        raise InfSupDegenerateError(
            "no cone directions present; supply a continuum inf-sup constant")
    svals = sla.svd(A, compute_uv=False) if min(A.shape) else np.zeros(0)
    smax = float(svals[0]) if svals.size else 0.0
    thresh = SVD_NULL_RTOL * smax
    nonzero = svals[svals > thresh] if svals.size else np.zeros(0)
    if nonzero.size == 0:
        raise InfSupDegenerateError(
            "all cone directions are unreachable (inf-sup degenerate); "
            "supply a continuum inf-sup constant")
    c_star = float(nonzero[-1])
    if full_output:
        return 1.0 / c_star, svals
    return 1.0 / c_star


def eval_J_A(problem, y):
    """Support of the bounded blocks only (cone blocks contribute zero)."""
    y = np.asarray(y, float)
    if y.shape != (problem.n_y,):
        raise ValueError(f"y has length {y.size}, expected {problem.n_y}")
    return problem.ops.support_bounded(problem.gy(y))


def eval_piC_norm(problem, y):
    """Distance measure sqrt(max over cone x of 2<x,Gy> - ||x||^2).

    Equals the W-norm of the Euclidean projection of Gy onto the cone
    subspace, and vanishes exactly on the finite-support cone.
    """
    y = np.asarray(y, float)
    if y.shape != (problem.n_y,):
        raise ValueError(f"y has length {y.size}, expected {problem.n_y}")
    g = problem.gy(y)
    return math.sqrt(max(problem.ops.cone_violation_sq(g), 0.0))


def rho_A(problem):
    """Max X-norm over the bounded part: per-block radii times weight mass."""
    return math.sqrt(max(problem.ops.rho_bounded_sq(), 0.0))


@dataclass
class MajorantCertificate:
    """All ingredients and the value of the computable upper bound."""

    y_used: np.ndarray
    J_A_value: float
    piC_norm: float
    C_star: float
    C_star_provenance: str
    rho_A: float
    norm_a: float
    norm_L_dual: float
    L_of_y: float
    denominator: float
    bound: float | None
    split_exact: bool = True   # block kinds decompose the set additively

    @property
    def admissible(self):
        return self.bound is not None

    def to_dict(self):
        return {
            "y_used": [float(v) for v in np.asarray(self.y_used).ravel()],
            "J_A_value": self.J_A_value,
            "piC_norm": self.piC_norm,
            "C_star": self.C_star,
            "C_star_provenance": self.C_star_provenance,
            "rho_A": self.rho_A,
            "norm_a": self.norm_a,
            "norm_L_dual": self.norm_L_dual,
            "L_of_y": self.L_of_y,
            "denominator": self.denominator,
            "bound": self.bound if self.bound is not None else "inadmissible",
            "split_exact": self.split_exact,
        }


def majorant_value(J_A_value, piC_norm, C_star, rho_A_value, norm_a,
                   norm_L_dual, L_of_y):
    """Bound and denominator from stored scalar ingredients.

    Shared by compute_majorant and certificate re-validation so that both
    evaluate the identical arithmetic.
    """
    denominator = L_of_y - C_star * piC_norm * norm_L_dual
    if denominator <= 0.0:
        return denominator, None
    bound = (J_A_value + rho_A_value * C_star * norm_a * piC_norm) / denominator
    return denominator, bound


def compute_majorant(problem, y, C_star, rho_A_value=None,
                     provenance="discrete", norm_a=None, norm_L_dual=None):
    """Assemble the certificate at trial field y.

    An inadmissible bound (nonpositive denominator) is reported as a value,
    not an error.  C_star may be zero only when the cone distance of y is
    exactly zero (the bound then collapses to J_A(y)/L(y)).
    """
    y = np.asarray(y, float)
    jA = eval_J_A(problem, y)
    pic = eval_piC_norm(problem, y)
    if C_star <= 0.0 and pic > 0.0:
        raise ValueError("C_star must be positive when the cone distance is nonzero")
    if rho_A_value is None:
        rho_A_value = rho_A(problem)
    if norm_a is None:
        norm_a = estimate_norm_a(problem)
    if norm_L_dual is None:
        norm_L_dual = estimate_norm_L_dual(problem)
    L_of_y = float(problem.load @ y)
    denominator, bound = majorant_value(jA, pic, C_star, rho_A_value,
                                        norm_a, norm_L_dual, L_of_y)
    return MajorantCertificate(
        y_used=y.copy(), J_A_value=jA, piC_norm=pic, C_star=C_star,
        C_star_provenance=provenance, rho_A=rho_A_value, norm_a=norm_a,
        norm_L_dual=norm_L_dual, L_of_y=L_of_y, denominator=denominator,
        bound=bound)


def coercivity_minorant(problem, lam, c_star=None):
    """Affine minorant of Phi_lam over the admissible set (a diagnostic).

    Returns (slope, offset) with Phi_lam(x) >= slope * ||x||_X - offset for
    every admissible x; slope is the cone inf-sup constant.
    """
    if c_star is None:
        c_star = 1.0 / estimate_C_star_discrete(problem)
    na = estimate_norm_a(problem)
    offset = (c_star + na) * rho_A(problem) + lam * estimate_norm_L_dual(problem)
    return c_star, offset
