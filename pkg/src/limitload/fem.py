"""Two-dimensional P1 front-ends producing discrete saddle instances.

Two model kinds are assembled:

VON_MISES      plane-strain limit analysis with a pressure-insensitive yield
               bound: per-triangle constant strains paired against stresses
               constrained by a deviator ball, displacement fields clamped on
               the GAMMA_0 part of the boundary, Y-metric ||grad v||^2.

DELAMINATION   an elastic body bonded along the GAMMA_B part of its boundary
               (on the x1-axis): stresses are unconstrained, the bonding
               traction on each GAMMA_B edge is confined to [-gamma, gamma],
               the x1-displacement vanishes on GAMMA_L, Y-metric is the full
               first-order Sobolev product.

Symmetric tensors use scaled coordinates (diagonal first, sqrt(2) times the
off-diagonal), so the admissible blocks are Euclidean balls and intervals.

Mesh files are plain text with three sections ("nodes": id x y,
"triangles": id n1 n2 n3, "edges": id n1 n2 tag), whitespace separated,
'#' comments.  Model files are JSON documents described in the README.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .blocks import (FREE, INTERVAL, deviatoric_ball_block, free_block,
                     interval_block)
from .errors import ProblemFormatError
from .problem import DiscreteSaddleProblem

GAMMA_0 = "GAMMA_0"
GAMMA_F = "GAMMA_F"
GAMMA_T = "GAMMA_T"
GAMMA_L = "GAMMA_L"
GAMMA_B = "GAMMA_B"
BOUNDARY_TAGS = (GAMMA_0, GAMMA_F, GAMMA_T, GAMMA_L, GAMMA_B)

VON_MISES = "VON_MISES"
DELAMINATION = "DELAMINATION"

_SQRT2 = math.sqrt(2.0)


@dataclass
class Mesh2D:
    """Conforming triangulation with tagged boundary edges."""

    nodes: np.ndarray                      # (n_nodes, 2)
    triangles: np.ndarray                  # (n_tri, 3), counterclockwise
    edges: list                            # [(n1, n2, tag), ...]

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, float)
        self.triangles = np.asarray(self.triangles, int)
        self.validate()

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def triangle_areas(self):
        p = self.nodes
        t = self.triangles
        d1 = p[t[:, 1]] - p[t[:, 0]]
        d2 = p[t[:, 2]] - p[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_length(self, n1, n2):
        return float(np.linalg.norm(self.nodes[n2] - self.nodes[n1]))

    def boundary_edge_set(self):
        count = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                count[key] = count.get(key, 0) + 1
        return {e for e, c in count.items() if c == 1}

    def validate(self):
        areas = self.triangle_areas()
        scale = float(np.max(np.abs(self.nodes))) if self.nodes.size else 1.0
        if np.any(areas <= 1e-14 * max(scale * scale, 1.0)):
            bad = int(np.argmin(areas))
            raise ProblemFormatError(
                f"triangle {bad} is degenerate or not counterclockwise "
                f"(signed area {areas[bad]:.3e})")
        boundary = self.boundary_edge_set()
        tagged = {}
        for n1, n2, tag in self.edges:
            if tag not in BOUNDARY_TAGS:
                raise ProblemFormatError(f"unknown boundary tag {tag!r}")
            key = (min(n1, n2), max(n1, n2))
            if key in tagged:
                raise ProblemFormatError(f"edge {key} tagged more than once")
            if key not in boundary:
                raise ProblemFormatError(f"edge {key} is not a boundary edge")
            tagged[key] = tag
        missing = boundary - set(tagged)
        if missing:
            raise ProblemFormatError(
                f"boundary edges without a tag: {sorted(missing)[:5]}")

    def tagged_edges(self, tag):
        return [(n1, n2) for n1, n2, t in self.edges if t == tag]

    def tagged_nodes(self, tag):
        out = set()
        for n1, n2, t in self.edges:
            if t == tag:
                out.add(n1)
                out.add(n2)
        return sorted(out)


@dataclass
class FemModel:
    """Mesh plus material/loading data for one assembly kind."""

    mesh: Mesh2D
    kind: str
    gamma: float
    body_force: tuple = (0.0, 0.0)
    tractions: dict = field(default_factory=dict)
    element_order: int = 1

    def __post_init__(self):
        if self.kind not in (VON_MISES, DELAMINATION):
            raise ProblemFormatError(f"unknown model kind {self.kind!r}")
        if not self.gamma > 0:
            raise ProblemFormatError("threshold gamma must be positive")
        if self.element_order != 1:
            raise ProblemFormatError("only first-order elements are supported")


def generate_rect_mesh(nx, ny, width, height, tags=None):
    """Structured crossed-diagonal triangulation of [0,width] x [0,height].

    Default side tags: left=GAMMA_L, bottom=GAMMA_B, top=GAMMA_F,
    right=GAMMA_T; override via tags={'left': ..., 'bottom': ..., ...}.
    """
    if nx < 1 or ny < 1:
        raise ProblemFormatError("nx and ny must be at least 1")
    side = {"left": GAMMA_L, "bottom": GAMMA_B, "top": GAMMA_F,
            "right": GAMMA_T}
    if tags:
        side.update(tags)

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    nodes = np.array([[x, y] for y in ys for x in xs])

    def nid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [[a, b, c], [a, c, d]]
            else:
                tris += [[a, b, d], [b, c, d]]

    edges = []
    for i in range(nx):
        edges.append((nid(i, 0), nid(i + 1, 0), side["bottom"]))
        edges.append((nid(i, ny), nid(i + 1, ny), side["top"]))
    for j in range(ny):
        edges.append((nid(0, j), nid(0, j + 1), side["left"]))
        edges.append((nid(nx, j), nid(nx, j + 1), side["right"]))
    return Mesh2D(nodes, np.array(tris), edges)


def _p1_gradients(nodes, tri):
    """Barycentric gradient coefficients (b_i, c_i) and area of one triangle."""
    p = nodes[tri]
    x, y = p[:, 0], p[:, 1]
    area2 = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]]) / area2
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]]) / area2
    return b, c, 0.5 * area2


def _strain_triplets(mesh, free_col):
    """Triplets of the per-triangle constant-strain map in scaled coordinates.

    Row layout: 3 rows per triangle (e11, e22, sqrt(2) e12); columns indexed
    by free degrees of freedom (interleaved node components).
    """
    rows, cols, vals = [], [], []
    areas = np.empty(mesh.n_triangles)
    for ti, tri in enumerate(mesh.triangles):
        b, c, area = _p1_gradients(mesh.nodes, tri)
        areas[ti] = area
        r0 = 3 * ti
        for k, node in enumerate(tri):
            cx = free_col[2 * node]
            cy = free_col[2 * node + 1]
            if cx >= 0:
                rows += [r0, r0 + 2]
                cols += [cx, cx]
                vals += [b[k], c[k] / _SQRT2]
            if cy >= 0:
                rows += [r0 + 1, r0 + 2]
                cols += [cy, cy]
                vals += [c[k], b[k] / _SQRT2]
    return rows, cols, vals, areas


def _scalar_stiffness(mesh):
    n = mesh.n_nodes
    K = sp.lil_matrix((n, n))
    for tri in mesh.triangles:
        b, c, area = _p1_gradients(mesh.nodes, tri)
        Ke = area * (np.outer(b, b) + np.outer(c, c))
        for i in range(3):
            for j in range(3):
                K[tri[i], tri[j]] += Ke[i, j]
    return K.tocsr()


def _scalar_mass(mesh):
    n = mesh.n_nodes
    Mloc = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    M = sp.lil_matrix((n, n))
    for ti, tri in enumerate(mesh.triangles):
        _, _, area = _p1_gradients(mesh.nodes, tri)
        for i in range(3):
            for j in range(3):
                M[tri[i], tri[j]] += area * Mloc[i, j]
    return M.tocsr()


def _expand_vector(Ms, free_col, n_free):
    """Lift a scalar node matrix to interleaved vector dofs on the free set."""
    Ms = Ms.tocoo()
    rows, cols, vals = [], [], []
    for i, j, v in zip(Ms.row, Ms.col, Ms.data):
        for comp in range(2):
            r = free_col[2 * i + comp]
            c = free_col[2 * j + comp]
            if r >= 0 and c >= 0:
                rows.append(r)
                cols.append(c)
                vals.append(v)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_free, n_free)).tocsr()


def _load_vector(model, free_col, n_free):
    mesh = model.mesh
    L = np.zeros(n_free)
    F = np.asarray(model.body_force, float)
    if np.any(F):
        for tri in mesh.triangles:
            _, _, area = _p1_gradients(mesh.nodes, tri)
            for node in tri:
                for comp in range(2):
                    c = free_col[2 * node + comp]
                    if c >= 0:
                        L[c] += area / 3.0 * F[comp]
    for tag, f in model.tractions.items():
        f = np.asarray(f, float)
        for n1, n2 in mesh.tagged_edges(tag):
            ln = mesh.edge_length(n1, n2)
            for node in (n1, n2):
                for comp in range(2):
                    c = free_col[2 * node + comp]
                    if c >= 0:
                        L[c] += 0.5 * ln * f[comp]
    return L


def _free_dof_map(mesh, fixed):
    """fixed: set of constrained interleaved dof indices -> column map."""
    free_col = -np.ones(2 * mesh.n_nodes, dtype=int)
    k = 0
    for d in range(2 * mesh.n_nodes):
        if d not in fixed:
            free_col[d] = k
            k += 1
    return free_col, k


def assemble_von_mises(model):
    """Plane-strain limit analysis instance (one deviator ball per triangle)."""
    if model.kind != VON_MISES:
        raise ProblemFormatError("model kind must be VON_MISES")
    mesh = model.mesh
    g0_nodes = mesh.tagged_nodes(GAMMA_0)
    if not g0_nodes:
        raise ProblemFormatError(
            "no GAMMA_0 boundary: the displacement metric would be singular")
    fixed = {2 * n + c for n in g0_nodes for c in range(2)}
    free_col, n_free = _free_dof_map(mesh, fixed)
    if n_free == 0:
        raise ProblemFormatError("no free unknowns: every node is constrained")

    rows, cols, vals, areas = _strain_triplets(mesh, free_col)
    n_x = 3 * mesh.n_triangles
    G = sp.coo_matrix((vals, (rows, cols)), shape=(n_x, n_free)).tocsr()
    W = np.repeat(areas, 3)
    M = _expand_vector(_scalar_stiffness(mesh), free_col, n_free)
    L = _load_vector(model, free_col, n_free)
    blocks = [deviatoric_ball_block(3 * ti, model.gamma, dim=2)
              for ti in range(mesh.n_triangles)]
    return DiscreteSaddleProblem(G, L, y_gram=M, x_weights=W, blocks=blocks)


def assemble_delamination(model):
    """Bonded-interface instance: free stresses plus interval bond tractions."""
    if model.kind != DELAMINATION:
        raise ProblemFormatError("model kind must be DELAMINATION")
    mesh = model.mesh
    for tag in (GAMMA_L, GAMMA_F, GAMMA_T, GAMMA_B):
        if not any(t == tag for _, _, t in mesh.edges):
            raise ProblemFormatError(f"missing boundary tag {tag}")
    b_edges = mesh.tagged_edges(GAMMA_B)
    ymin = float(mesh.nodes[:, 1].min())
    scale = float(np.max(np.abs(mesh.nodes))) or 1.0
    for n1, n2 in b_edges:
        if max(abs(mesh.nodes[n1, 1] - ymin), abs(mesh.nodes[n2, 1] - ymin)) \
                > 1e-12 * scale:
            raise ProblemFormatError(
                "GAMMA_B edges must lie on the lower (x1-axis) boundary")

    fixed = {2 * n for n in mesh.tagged_nodes(GAMMA_L)}   # x1-component only
    free_col, n_free = _free_dof_map(mesh, fixed)
    if n_free == 0:
        raise ProblemFormatError("no free unknowns: every node is constrained")

    rows, cols, vals, areas = _strain_triplets(mesh, free_col)
    n_sigma = 3 * mesh.n_triangles
    lens = []
    for ei, (n1, n2) in enumerate(b_edges):
        r = n_sigma + ei
        lens.append(mesh.edge_length(n1, n2))
        for node in (n1, n2):
            c = free_col[2 * node + 1]
            if c >= 0:
                rows.append(r)
                cols.append(c)
                vals.append(0.5)                       # edge-averaged x2-trace
    n_x = n_sigma + len(b_edges)
    G = sp.coo_matrix((vals, (rows, cols)), shape=(n_x, n_free)).tocsr()
    W = np.concatenate([np.repeat(areas, 3), np.asarray(lens)])
    M = _expand_vector(_scalar_stiffness(mesh) + _scalar_mass(mesh),
                       free_col, n_free)
    L = _load_vector(model, free_col, n_free)
    blocks = [free_block(3 * ti, 3 * ti + 3) for ti in range(mesh.n_triangles)]
    blocks += [interval_block(n_sigma + ei, n_sigma + ei + 1,
                              -model.gamma, model.gamma)
               for ei in range(len(b_edges))]
    return DiscreteSaddleProblem(G, L, y_gram=M, x_weights=W, blocks=blocks)


def assemble_model(model):
    if model.kind == VON_MISES:
        return assemble_von_mises(model)
    return assemble_delamination(model)


def delamination_closed_form(gamma, gamma_b_length, total_vertical_load):
    """Exact critical multiplier: gamma |Gamma_b| / |net vertical load|."""
    if gamma <= 0 or gamma_b_length <= 0:
        raise ValueError("gamma and gamma_b_length must be positive")
    if total_vertical_load == 0:
        return math.inf
    return gamma * gamma_b_length / abs(total_vertical_load)


@dataclass
class DualCheckReport:
    residual: float
    x: np.ndarray | None
    skipped: bool = False


def dual_delamination_check(problem, lambda_star, y_star, tol=1e-8):
    """Verify the dual solution structure at the critical multiplier.

    Sets every interval coordinate to its threshold times the sign of the
    corresponding bond opening rate, then solves for unconstrained stresses
    balancing the remaining load by least squares in the Y* metric; returns
    the residual, which vanishes when lambda_star is the critical value.
    """
    if not math.isfinite(lambda_star):
        return DualCheckReport(0.0, None, skipped=True)
    y_star = np.asarray(y_star, float)
    g = problem.gy(y_star)
    x = np.zeros(problem.n_x)
    free_cols = []
    for b in problem.blocks:
        if b.kind == INTERVAL:
            for i in range(b.start, b.stop):
                x[i] = b.hi if g[i] >= 0 else b.lo
        elif b.kind == FREE:
            free_cols.extend(range(b.start, b.stop))
    target = lambda_star * problem.load - problem.gt_w(x)
    Lw = problem.m_whitener()
    if free_cols:
        A = (problem.strain_map.toarray().T
             * problem.x_weights[None, :])[:, free_cols]
        if Lw is not None:
            A = sla.solve_triangular(Lw, A, lower=True)
            b_vec = sla.solve_triangular(Lw, target, lower=True)
        else:
            b_vec = target
        sol, *_ = np.linalg.lstsq(A, b_vec, rcond=None)
        x[free_cols] = sol
        residual = float(np.linalg.norm(A @ sol - b_vec))
    else:
        residual = problem.dual_norm(target)
    return DualCheckReport(residual, x)


# -- file formats --------------------------------------------------------------


def load_mesh(path):
    """Parse the three-section plain-text mesh format."""
    nodes, tris, edges = [], [], []
    section = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.lower() in ("nodes", "triangles", "edges"):
                section = line.lower()
                continue
            parts = line.split()
            if section is None:
                raise ProblemFormatError(
                    f"{path}:{lineno}: data before a section header")
            try:
                if section == "nodes":
                    nodes.append((float(parts[1]), float(parts[2])))
                elif section == "triangles":
                    tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
                elif section == "edges":
                    edges.append((int(parts[1]), int(parts[2]), parts[3]))
            except (IndexError, ValueError) as exc:
                raise ProblemFormatError(
                    f"{path}:{lineno}: malformed line {line!r}") from exc
    if not nodes or not tris:
        raise ProblemFormatError(f"{path}: missing nodes or triangles section")
    return Mesh2D(np.array(nodes), np.array(tris), edges)


def save_mesh(mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("nodes\n")
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")
        fh.write("triangles\n")
        for i, t in enumerate(mesh.triangles):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]}\n")
        fh.write("edges\n")
        for i, (n1, n2, tag) in enumerate(mesh.edges):
            fh.write(f"{i} {n1} {n2} {tag}\n")


def model_from_dict(d, base_dir="."):
    try:
        kind = str(d["kind"]).upper()
        gamma = float(d["gamma"])
        mesh_spec = d["mesh"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemFormatError(f"malformed model file: {exc}") from exc
    if "rect" in mesh_spec:
        nx, ny, width, height = mesh_spec["rect"]
        mesh = generate_rect_mesh(int(nx), int(ny), float(width), float(height),
                                  tags=mesh_spec.get("tags"))
    elif "file" in mesh_spec:
        import os
        mesh = load_mesh(os.path.join(base_dir, mesh_spec["file"]))
    else:
        raise ProblemFormatError("model mesh must give 'rect' or 'file'")
    return FemModel(mesh=mesh, kind=kind, gamma=gamma,
                    body_force=tuple(d.get("body_force", (0.0, 0.0))),
                    tractions={k: tuple(v)
                               for k, v in d.get("tractions", {}).items()})


def load_model(path):
    import os
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProblemFormatError(f"cannot parse {path}: {exc}") from exc
    return model_from_dict(d, base_dir=os.path.dirname(path) or ".")
