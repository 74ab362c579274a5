"""Pointwise convex constraint blocks with closed-form projections and supports.

Each block constrains a contiguous slice of the X-coefficient vector.  The
admissible set is the product of the blocks' sets.  Every kind admits an exact
Euclidean projection, a support function in closed form, and a decomposition
into a bounded part plus a closed convex cone:

    BALL             |x| <= gamma          bounded part only
    DEVIATORIC_BALL  |dev(x)| <= gamma     ball on the deviator + free trace line
    INTERVAL         lo <= x_i <= hi       bounded part only
    FREE             no constraint         cone part only (a subspace)
    ZERO             x = 0                 trivial cone

Symmetric tensors are stored in scaled ("Mandel") coordinates: the d diagonal
components first, then the off-diagonal components multiplied by sqrt(2), so
that the Frobenius inner product and norm become the Euclidean ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BALL = "BALL"
DEVIATORIC_BALL = "DEVIATORIC_BALL"
INTERVAL = "INTERVAL"
FREE = "FREE"
ZERO = "ZERO"

KINDS = (BALL, DEVIATORIC_BALL, INTERVAL, FREE, ZERO)


def mandel_size(dim):
    """Number of scaled coordinates of a symmetric dim x dim tensor."""
    return dim * (dim + 1) // 2


def trace_direction(dim):
    """Unit vector along the isotropic (trace) axis in scaled coordinates."""
    t = np.zeros(mandel_size(dim))
    t[:dim] = 1.0 / np.sqrt(dim)
    return t


@dataclass(frozen=True)
class AdmissibleBlock:
    """One pointwise constraint block over coordinates [start, stop)."""

    start: int
    stop: int
    kind: str
    gamma: float | None = None
    lo: float | None = None
    hi: float | None = None
    dim: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.stop <= self.start:
            raise ValueError(f"empty coordinate range [{self.start}, {self.stop})")
        if self.kind in (BALL, DEVIATORIC_BALL):
            if self.gamma is None or not self.gamma > 0:
                raise ValueError(f"{self.kind} block needs radius gamma > 0")
        if self.kind == DEVIATORIC_BALL:
            if self.dim not in (2, 3):
                raise ValueError("DEVIATORIC_BALL needs spatial dim 2 or 3")
            if self.size != mandel_size(self.dim):
                raise ValueError(
                    f"DEVIATORIC_BALL with dim={self.dim} spans "
                    f"{mandel_size(self.dim)} coordinates, got {self.size}"
                )
        if self.kind == INTERVAL:
            if self.lo is None or self.hi is None:
                raise ValueError("INTERVAL block needs lo and hi")
            # 0 must be admissible in every block
            if not (self.lo <= 0.0 <= self.hi):
                raise ValueError(f"INTERVAL [{self.lo}, {self.hi}] must contain 0")

    @property
    def size(self):
        return self.stop - self.start

    @property
    def coords(self):
        return range(self.start, self.stop)

    @property
    def split_role(self):
        """Which side of the bounded-plus-cone split the block feeds."""
        if self.kind in (BALL, INTERVAL):
            return "A"
        if self.kind in (FREE, ZERO):
            return "C"
        return "A+C"  # deviator ball + trace line

    @property
    def is_bounded(self):
        return self.kind in (BALL, INTERVAL, ZERO)

    def params_dict(self):
        if self.kind in (BALL,):
            return {"gamma": self.gamma}
        if self.kind == DEVIATORIC_BALL:
            return {"gamma": self.gamma, "dim": self.dim}
        if self.kind == INTERVAL:
            return {"lo": self.lo, "hi": self.hi}
        return {}


def ball_block(start, stop, gamma):
    return AdmissibleBlock(start, stop, BALL, gamma=gamma)


def deviatoric_ball_block(start, gamma, dim=2):
    return AdmissibleBlock(start, start + mandel_size(dim), DEVIATORIC_BALL,
                           gamma=gamma, dim=dim)


def interval_block(start, stop, lo, hi):
    return AdmissibleBlock(start, stop, INTERVAL, lo=lo, hi=hi)


def free_block(start, stop):
    return AdmissibleBlock(start, stop, FREE)


def zero_block(start, stop):
    return AdmissibleBlock(start, stop, ZERO)


class BlockOps:
    """Vectorized closed-form maps for a fixed block layout and X-weights.

    Groups block coordinates by kind once, so that projections, supports and
    cone projections run as a handful of numpy segment operations instead of
    a Python loop per block.
    """

    def __init__(self, blocks, w):
        self.blocks = tuple(blocks)
        self.w = np.asarray(w, float)

        balls = [b for b in self.blocks if b.kind == BALL]
        self._ball = None
        if balls:
            idx = np.concatenate([np.arange(b.start, b.stop) for b in balls])
            sizes = np.array([b.size for b in balls])
            off = np.concatenate(([0], np.cumsum(sizes)[:-1]))
            gam = np.array([b.gamma for b in balls])
            w0 = np.array([self.w[b.start] for b in balls])
            self._ball = (idx, off, sizes, gam, w0)

        self._dev = []
        for d in sorted({b.dim for b in self.blocks if b.kind == DEVIATORIC_BALL}):
            devs = [b for b in self.blocks if b.kind == DEVIATORIC_BALL and b.dim == d]
            idx = np.concatenate([np.arange(b.start, b.stop) for b in devs])
            gam = np.array([b.gamma for b in devs])
            w0 = np.array([self.w[b.start] for b in devs])
            self._dev.append((d, mandel_size(d), idx, gam, w0, devs))

        ivals = [b for b in self.blocks if b.kind == INTERVAL]
        self._ival = None
        if ivals:
            idx = np.concatenate([np.arange(b.start, b.stop) for b in ivals])
            lo = np.concatenate([np.full(b.size, b.lo) for b in ivals])
            hi = np.concatenate([np.full(b.size, b.hi) for b in ivals])
            self._ival = (idx, lo, hi)

        free = [b for b in self.blocks if b.kind == FREE]
        self._free_idx = (np.concatenate([np.arange(b.start, b.stop) for b in free])
                          if free else np.array([], dtype=int))
        zero = [b for b in self.blocks if b.kind == ZERO]
        self._zero_idx = (np.concatenate([np.arange(b.start, b.stop) for b in zero])
                          if zero else np.array([], dtype=int))

    # -- projections ------------------------------------------------------

    def project_set(self, z):
        """Euclidean projection onto the product admissible set."""
        out = np.array(z, float, copy=True)
        if self._zero_idx.size:
            out[self._zero_idx] = 0.0
        if self._ball is not None:
            idx, off, sizes, gam, w0 = self._ball
            seg = out[idx]
            norms = np.sqrt(np.add.reduceat(seg * seg, off))
            scale = np.where(norms > gam, gam / np.maximum(norms, 1e-300), 1.0)
            out[idx] = seg * np.repeat(scale, sizes)
        for d, m, idx, gam, w0, _ in self._dev:
            rows = out[idx].reshape(-1, m)
            tr = rows[:, :d].sum(axis=1) / d   # trace coefficient per diagonal slot
            dev = rows.copy()
            dev[:, :d] -= tr[:, None]
            dn = np.sqrt((dev * dev).sum(axis=1))
            scale = np.where(dn > gam, gam / np.maximum(dn, 1e-300), 1.0)
            rows = dev * scale[:, None]
            rows[:, :d] += tr[:, None]
            out[idx] = rows.ravel()
        if self._ival is not None:
            idx, lo, hi = self._ival
            out[idx] = np.clip(out[idx], lo, hi)
        return out

    # -- support pieces ----------------------------------------------------

    def support_bounded(self, g):
        """W-weighted support of the bounded parts at pairing direction g."""
        val = 0.0
        if self._ball is not None:
            idx, off, sizes, gam, w0 = self._ball
            seg = g[idx]
            norms = np.sqrt(np.add.reduceat(seg * seg, off))
            val += float(np.sum(gam * w0 * norms))
        for d, m, idx, gam, w0, _ in self._dev:
            rows = g[idx].reshape(-1, m)
            tr = rows[:, :d].sum(axis=1) / d
            dev = rows.copy()
            dev[:, :d] -= tr[:, None]
            dn = np.sqrt((dev * dev).sum(axis=1))
            val += float(np.sum(gam * w0 * dn))
        if self._ival is not None:
            idx, lo, hi = self._ival
            gi = g[idx]
            wi = self.w[idx]
            val += float(np.sum(wi * (hi * np.maximum(gi, 0.0)
                                      + lo * np.minimum(gi, 0.0))))
        return val

    def cone_project(self, g):
        """Euclidean projection of g onto the cone-part subspace."""
        out = np.zeros_like(np.asarray(g, float))
        if self._free_idx.size:
            out[self._free_idx] = g[self._free_idx]
        for d, m, idx, gam, w0, _ in self._dev:
            rows = np.asarray(g, float)[idx].reshape(-1, m)
            tr = rows[:, :d].sum(axis=1) / d
            part = np.zeros_like(rows)
            part[:, :d] = tr[:, None]
            out[idx] = part.ravel()
        return out

    def cone_violation_sq(self, g):
        """Squared W-norm of the cone-part projection of g."""
        val = 0.0
        if self._free_idx.size:
            gi = g[self._free_idx]
            val += float(np.sum(self.w[self._free_idx] * gi * gi))
        for d, m, idx, gam, w0, _ in self._dev:
            rows = g[idx].reshape(-1, m)
            tr = rows[:, :d].sum(axis=1) / np.sqrt(d)   # component along unit trace axis
            val += float(np.sum(w0 * tr * tr))
        return val

    def rho_bounded_sq(self):
        """Squared max X-norm over the bounded part of the admissible set."""
        val = 0.0
        if self._ball is not None:
            _, _, _, gam, w0 = self._ball
            val += float(np.sum(gam * gam * w0))
        for d, m, idx, gam, w0, _ in self._dev:
            val += float(np.sum(gam * gam * w0))
        if self._ival is not None:
            idx, lo, hi = self._ival
            val += float(np.sum(self.w[idx] * np.maximum(lo * lo, hi * hi)))
        return val

    def cone_basis(self):
        """Orthonormal coordinate basis of the cone subspace.

        Returns (C, w_c, labels): C is dense n_x-by-n_c with unit columns,
        w_c the X-weight attached to each direction, labels a list of
        (block_index, description) pairs.
        """
        n_x = self.w.size
        cols, w_c, labels = [], [], []
        for bi, b in enumerate(self.blocks):
            if b.kind == FREE:
                for i in b.coords:
                    e = np.zeros(n_x)
                    e[i] = 1.0
                    cols.append(e)
                    w_c.append(self.w[i])
                    labels.append((bi, f"coord {i}"))
            elif b.kind == DEVIATORIC_BALL:
                e = np.zeros(n_x)
                e[b.start:b.stop] = trace_direction(b.dim)
                cols.append(e)
                w_c.append(self.w[b.start])
                labels.append((bi, "trace"))
        if not cols:
            return np.zeros((n_x, 0)), np.zeros(0), []
        return np.column_stack(cols), np.asarray(w_c), labels
