"""Discrete saddle problem container and its file format.

A problem instance stores the bilinear pairing a(x, y) = <x, G y>_X through a
sparse map G from Y-coefficients to X-coefficients, a load vector L, the
Y-metric M (symmetric positive definite), the diagonal X-weights W, and an
ordered list of admissible blocks partitioning the X coordinates.  All solver
modules treat instances as immutable and share them freely across threads.

Problem files are JSON documents with fields ``n_x``, ``n_y``, ``G`` (triplet
list), ``L``, ``M`` (triplet list or "identity"), ``W`` (diagonal list or
"identity"), and ``blocks`` (list of {coords, kind, params}); ``coords`` is a
half-open [start, stop) pair.
"""

from __future__ import annotations

import json

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .blocks import (AdmissibleBlock, BlockOps, BALL, DEVIATORIC_BALL,
                     INTERVAL, FREE, ZERO)
from .errors import ProblemFormatError

_UNIFORM_RTOL = 1e-12


class DiscreteSaddleProblem:
    """Matrices, vectors and blocks realizing one discrete instance."""

    def __init__(self, strain_map, load, y_gram=None, x_weights=None, blocks=()):
        G = sp.csr_matrix(strain_map, dtype=float)
        self.strain_map = G
        self._Gt = G.T.tocsr()
        self.n_x, self.n_y = G.shape

        self.load = np.asarray(load, float).ravel()
        if self.load.shape != (self.n_y,):
            raise ProblemFormatError(
                f"load has length {self.load.size}, expected n_y={self.n_y}")
        if not np.any(self.load):
            raise ProblemFormatError("load vector is identically zero")

        if x_weights is None:
            self.x_weights = np.ones(self.n_x)
        else:
            self.x_weights = np.asarray(x_weights, float).ravel()
            if self.x_weights.shape != (self.n_x,):
                raise ProblemFormatError("x_weights length mismatch")
            if np.any(self.x_weights <= 0):
                raise ProblemFormatError("x_weights must be strictly positive")

        self.blocks = tuple(blocks)
        self._validate_blocks()

        if y_gram is None:
            self.y_gram = None
            self._m_cho = None
        else:
            M = np.asarray(sp.csr_matrix(y_gram, dtype=float).todense())
            if M.shape != (self.n_y, self.n_y):
                raise ProblemFormatError("y_gram shape mismatch")
            if not np.allclose(M, M.T, rtol=1e-10, atol=0):
                raise ProblemFormatError("y_gram is not symmetric")
            self.y_gram = M
            try:
                self._m_cho = sla.cho_factor(M, lower=True)
            except sla.LinAlgError as exc:
                raise ProblemFormatError(
                    "y_gram is not positive definite") from exc

        self.ops = BlockOps(self.blocks, self.x_weights)
        self._check_uniform_ball_weights()
        self._cache = {}

    # -- validation ---------------------------------------------------------

    def _validate_blocks(self):
        if not self.blocks:
            raise ProblemFormatError("no admissible blocks given")
        covered = np.zeros(self.n_x, dtype=int)
        for bi, b in enumerate(self.blocks):
            if not isinstance(b, AdmissibleBlock):
                raise ProblemFormatError(f"block {bi} is not an AdmissibleBlock")
            if b.start < 0 or b.stop > self.n_x:
                raise ProblemFormatError(
                    f"block {bi} ({b.kind}) range [{b.start}, {b.stop}) exceeds n_x={self.n_x}")
            covered[b.start:b.stop] += 1
        if np.any(covered > 1):
            bad = int(np.argmax(covered > 1))
            owners = [f"{bi} ({b.kind} [{b.start}, {b.stop}))"
                      for bi, b in enumerate(self.blocks)
                      if b.start <= bad < b.stop]
            raise ProblemFormatError(
                f"blocks {' and '.join(owners)} overlap at coordinate {bad}")
        if np.any(covered == 0):
            bad = int(np.argmax(covered == 0))
            raise ProblemFormatError(
                f"coordinate {bad} is not covered by any block")

    def _check_uniform_ball_weights(self):
        # closed-form radial clamps assume one quadrature weight per ball block
        for bi, b in enumerate(self.blocks):
            if b.kind in (BALL, DEVIATORIC_BALL) and b.size > 1:
                ws = self.x_weights[b.start:b.stop]
                if ws.max() - ws.min() > _UNIFORM_RTOL * ws.max():
                    raise ProblemFormatError(
                        f"block {bi} ({b.kind}) has non-uniform x_weights; "
                        "ball-type blocks require one weight per block")

    # -- basic linear maps ----------------------------------------------------

    def gy(self, y):
        """Apply G: Y-coefficients to X-coefficients."""
        return self.strain_map @ np.asarray(y, float)

    def gt_w(self, x):
        """Adjoint pairing: G^T (W x), a Y* coefficient vector."""
        return self._Gt @ (self.x_weights * np.asarray(x, float))

    def m_solve(self, r):
        """Solve M z = r (identity metric if M was not given)."""
        r = np.asarray(r, float)
        if self._m_cho is None:
            return r.copy()
        return sla.cho_solve(self._m_cho, r)

    def x_inner(self, u, v):
        return float(np.sum(self.x_weights * u * v))

    def x_norm(self, u):
        return float(np.sqrt(max(self.x_inner(u, u), 0.0)))

    def y_norm(self, y):
        y = np.asarray(y, float)
        if self.y_gram is None:
            return float(np.linalg.norm(y))
        return float(np.sqrt(max(float(y @ (self.y_gram @ y)), 0.0)))

    def dual_norm(self, r):
        """Y*-norm sqrt(r^T M^-1 r)."""
        r = np.asarray(r, float)
        return float(np.sqrt(max(float(r @ self.m_solve(r)), 0.0)))

    def m_whitener(self):
        """Lower Cholesky factor of M (None for the identity metric)."""
        if self._m_cho is None:
            return None
        c, lower = self._m_cho
        return np.tril(c) if lower else np.triu(c).T

    # -- serialization --------------------------------------------------------

    def to_dict(self):
        coo = self.strain_map.tocoo()
        d = {
            "n_x": self.n_x,
            "n_y": self.n_y,
            "G": [[int(i), int(j), float(v)]
                  for i, j, v in zip(coo.row, coo.col, coo.data)],
            "L": [float(v) for v in self.load],
            "M": "identity",
            "W": "identity",
            "blocks": [
                {"coords": [b.start, b.stop], "kind": b.kind,
                 "params": b.params_dict()}
                for b in self.blocks
            ],
        }
        if self.y_gram is not None:
            d["M"] = [[int(i), int(j), float(self.y_gram[i, j])]
                      for i in range(self.n_y) for j in range(self.n_y)
                      if self.y_gram[i, j] != 0.0]
        if not np.all(self.x_weights == 1.0):
            d["W"] = [float(v) for v in self.x_weights]
        return d


def _block_from_dict(entry, index):
    try:
        start, stop = (int(v) for v in entry["coords"])
        kind = str(entry["kind"]).upper()
        params = entry.get("params", {}) or {}
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemFormatError(f"malformed block entry {index}: {entry!r}") from exc
    if kind == BALL:
        return AdmissibleBlock(start, stop, BALL, gamma=float(params["gamma"]))
    if kind == DEVIATORIC_BALL:
        return AdmissibleBlock(start, stop, DEVIATORIC_BALL,
                               gamma=float(params["gamma"]),
                               dim=int(params.get("dim", 2)))
    if kind == INTERVAL:
        return AdmissibleBlock(start, stop, INTERVAL,
                               lo=float(params["lo"]), hi=float(params["hi"]))
    if kind in (FREE, ZERO):
        return AdmissibleBlock(start, stop, kind)
    raise ProblemFormatError(f"block {index} has unknown kind {kind!r}")


def problem_from_dict(d):
    try:
        n_x, n_y = int(d["n_x"]), int(d["n_y"])
        g_trip = d["G"]
        load = d["L"]
        m_spec = d.get("M", "identity")
        w_spec = d.get("W", "identity")
        block_specs = d["blocks"]
    except (KeyError, TypeError) as exc:
        raise ProblemFormatError(f"missing problem field: {exc}") from exc

    try:
        rows = [int(t[0]) for t in g_trip]
        cols = [int(t[1]) for t in g_trip]
        vals = [float(t[2]) for t in g_trip]
    except (TypeError, ValueError, IndexError) as exc:
        raise ProblemFormatError("G must be a list of [i, j, value] triplets") from exc
    G = sp.coo_matrix((vals, (rows, cols)), shape=(n_x, n_y)).tocsr()

    if isinstance(m_spec, str):
        if m_spec.lower() != "identity":
            raise ProblemFormatError(f"unknown M specification {m_spec!r}")
        M = None
    else:
        mr = [int(t[0]) for t in m_spec]
        mc = [int(t[1]) for t in m_spec]
        mv = [float(t[2]) for t in m_spec]
        M = sp.coo_matrix((mv, (mr, mc)), shape=(n_y, n_y)).tocsr()

    if isinstance(w_spec, str):
        if w_spec.lower() != "identity":
            raise ProblemFormatError(f"unknown W specification {w_spec!r}")
        W = None
    else:
        W = np.asarray(w_spec, float)

    blocks = [_block_from_dict(e, i) for i, e in enumerate(block_specs)]
    try:
        return DiscreteSaddleProblem(G, load, y_gram=M, x_weights=W, blocks=blocks)
    except ValueError as exc:
        raise ProblemFormatError(str(exc)) from exc


def load_problem(path):
    """Read a problem file (JSON syntax) and build the instance."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProblemFormatError(f"cannot parse {path}: {exc}") from exc
    return problem_from_dict(d)


def save_problem(problem, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
