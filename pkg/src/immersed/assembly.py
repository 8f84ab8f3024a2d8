"""Global sparse-system assembly for the compact nine-point scheme.

Builds A·u = b over the full grid: fourth-order compact rows at interior
nodes, identity rows for Dirichlet boundaries and masked body interiors,
third-order one-sided rows for Neumann edges, and explicit-jump right-hand-
side corrections at nodes whose stencil straddles an interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .grid import Classification, Grid
from .hoc import STENCIL_OFFSETS, hoc_letters, stencil_weights
from .jump import JumpError, rhs_corrections, route_corrections

__all__ = [
    "ROW_DIRICHLET",
    "ROW_REGULAR",
    "ROW_IRREGULAR",
    "ROW_BODY",
    "ROW_NEUMANN",
    "ROW_CUSTOM",
    "ROW_LABELS",
    "AssemblyError",
    "EdgeCondition",
    "dirichlet",
    "neumann",
    "custom_rows",
    "BoundarySpec",
    "SparseSystem",
    "assemble",
]

ROW_DIRICHLET = 0
ROW_REGULAR = 1
ROW_IRREGULAR = 2
ROW_BODY = 3
ROW_NEUMANN = 4
ROW_CUSTOM = 5

ROW_LABELS = {
    ROW_DIRICHLET: "dirichlet",
    ROW_REGULAR: "interior-regular",
    ROW_IRREGULAR: "interior-irregular",
    ROW_BODY: "body-interior",
    ROW_NEUMANN: "neumann",
    ROW_CUSTOM: "custom",
}


class AssemblyError(Exception):
    pass


@dataclass(frozen=True)
class EdgeCondition:
    """Boundary condition applied along one edge of the rectangle.

    kind "dirichlet": value is g(x, y) (or a constant); identity row u = g.
    kind "neumann": value is the outward normal derivative g(x, y); the row
        is the third-order one-sided difference
        (11 u_b - 18 u_1 + 9 u_2 - 2 u_3) / (6 s) = g
        with u_1..u_3 the nodes stepping inward and s the mesh spacing.
    kind "custom": value is builder(grid, i, j) -> (columns, weights, rhs)
        giving an arbitrary row for each edge node; used for closures that
        couple a boundary value to interior data.
    """

    kind: str
    value: Union[float, Callable]


def dirichlet(value) -> EdgeCondition:
    return EdgeCondition("dirichlet", value)


def neumann(value=0.0) -> EdgeCondition:
    return EdgeCondition("neumann", value)


def custom_rows(builder) -> EdgeCondition:
    return EdgeCondition("custom", builder)


@dataclass(frozen=True)
class BoundarySpec:
    """Conditions for the four edges.

    Corner nodes take a Dirichlet condition from either adjacent edge when
    one exists (left/right edge checked first); otherwise they use the
    left/right edge condition.
    """

    left: EdgeCondition
    right: EdgeCondition
    bottom: EdgeCondition
    top: EdgeCondition

    @classmethod
    def all_dirichlet(cls, value) -> "BoundarySpec":
        e = dirichlet(value)
        return cls(e, e, e, e)


@dataclass
class SparseSystem:
    """Assembled linear system with per-row provenance.

    matrix is CSR with a structurally symmetric sparsity pattern (explicit
    zeros pad rows whose transpose position carries an entry); interior rows
    hold the nine compact-stencil columns.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    row_kind: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    def dump_coordinate(self, target) -> None:
        """Write every stored entry as one "row col value" line."""
        own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
        fh = open(target, "w") if own else target
        try:
            coo = self.matrix.tocoo()
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")
        finally:
            if own:
                fh.close()


def _edge_value(cond, x, y):
    if callable(cond.value):
        out = cond.value(x, y)
    else:
        out = cond.value
    return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).ravel()


def _boundary_nodes(grid):
    """Edge-name -> (i, j) arrays; corners resolved once, to a single edge."""
    m, n = grid.m, grid.n
    ii, jj = {}, {}
    ii["left"] = np.zeros(n, dtype=int)
    jj["left"] = np.arange(n)
    ii["right"] = np.full(n, m - 1)
    jj["right"] = np.arange(n)
    ii["bottom"] = np.arange(1, m - 1)
    jj["bottom"] = np.zeros(m - 2, dtype=int)
    ii["top"] = np.arange(1, m - 1)
    jj["top"] = np.full(m - 2, n - 1)
    return ii, jj


def _resolve_corners(bc, grid, ii, jj):
    """Move a corner to the adjacent y-edge when that gives it a Dirichlet
    condition and the x-edge would not."""
    m, n = grid.m, grid.n
    corners = {
        (0, 0): ("left", "bottom"),
        (m - 1, 0): ("right", "bottom"),
        (0, n - 1): ("left", "top"),
        (m - 1, n - 1): ("right", "top"),
    }
    moves = []
    for (ci, cj), (xe, ye) in corners.items():
        if getattr(bc, xe).kind != "dirichlet" and getattr(bc, ye).kind == "dirichlet":
            moves.append((ci, cj, xe, ye))
    for ci, cj, xe, ye in moves:
        keep = ~((ii[xe] == ci) & (jj[xe] == cj))
        ii[xe], jj[xe] = ii[xe][keep], jj[xe][keep]
        ii[ye] = np.append(ii[ye], ci)
        jj[ye] = np.append(jj[ye], cj)
    return ii, jj


def _neumann_entries(grid, edge, i, j, g):
    """Third-order one-sided rows for the outward normal derivative."""
    m = grid.m
    coeff = np.array([11.0, -18.0, 9.0, -2.0])
    if edge in ("left", "right"):
        s = grid.h
        step = 1 if edge == "left" else -1
        cols = [(i + step * k) + j * m for k in range(4)]
    else:
        s = grid.l
        step = 1 if edge == "bottom" else -1
        cols = [i + (j + step * k) * m for k in range(4)]
    rows = np.repeat(i + j * m, 4).reshape(-1, 4)
    cols = np.stack(cols, axis=1)
    data = np.broadcast_to(coeff / (6.0 * s), cols.shape)
    return rows.ravel(), cols.ravel(), data.ravel(), g


def assemble(
    grid: Grid,
    classification: Classification,
    fields,
    jumps,
    bc: BoundarySpec,
    *,
    mask_bodies: bool = False,
    corner: str = "taylor",
    corrections_enabled: bool = True,
    order: Optional[int] = None,
    node_order: Optional[np.ndarray] = None,
) -> SparseSystem:
    """Assemble the global system for b·(u_xx+u_yy) + c·u_x + d·u_y + k·u = f.

    fields supplies the 25 coefficient/source arrays side-aware over the
    grid; jumps supplies interface jump data consumed by the explicit
    right-hand-side corrections at irregular nodes.  order sets the
    truncation of the jump Taylor sums; default is the highest the source
    can feed (its `order` attribute, else 3).  With mask_bodies the nodes
    strictly inside bodies are pinned to zero by identity rows.
    node_order optionally relabels unknowns: output row/col node_order[k]
    corresponds to grid node k.
    """
    m, n = grid.m, grid.n
    size = m * n
    X, Y = grid.meshgrid()
    side = classification.side

    with np.errstate(all="ignore"):
        vals = fields.evaluate_on(X, Y, side)
        letters = hoc_letters(vals, grid.h, grid.l)
        weights = stencil_weights(letters, grid.h, grid.l)
    weights = {
        off: np.broadcast_to(np.asarray(w, dtype=float), (n, m))
        for off, w in weights.items()
    }

    interior = np.zeros((n, m), dtype=bool)
    interior[1:-1, 1:-1] = True
    body = classification.in_body
    if mask_bodies:
        pde_mask = interior & ~body
    else:
        pde_mask = interior

    beta = np.broadcast_to(np.asarray(vals["beta"], dtype=float), (n, m))
    bad = pde_mask & ((beta == 0.0) | ~np.isfinite(beta))
    if np.any(bad):
        j, i = np.argwhere(bad)[0]
        raise AssemblyError(f"singular diffusion coefficient at node ({i}, {j})")
    for off in STENCIL_OFFSETS:
        if np.any(pde_mask & ~np.isfinite(weights[off])):
            raise AssemblyError("non-finite stencil weight at an interior node")

    jndx, indx = np.nonzero(pde_mask)
    rows_pde = jndx * m + indx
    row_blocks = []
    col_blocks = []
    dat_blocks = []
    for da, db in STENCIL_OFFSETS:
        row_blocks.append(rows_pde)
        col_blocks.append((jndx + db) * m + (indx + da))
        dat_blocks.append(weights[(da, db)][jndx, indx])

    rhs = np.zeros(size)
    F = np.broadcast_to(np.asarray(letters["F"], dtype=float), (n, m))
    rhs[rows_pde] = F[jndx, indx]

    row_kind = np.full(size, ROW_REGULAR, dtype=np.int8)
    irregular = classification.irregular
    row_kind[(irregular & pde_mask).ravel()] = ROW_IRREGULAR

    # Explicit-jump corrections: transfer across-interface stencil legs onto
    # the right-hand side.  Geometry-only work stays identical when the
    # corrections are disabled so the two assemblies share structure.
    if order is None:
        order = getattr(jumps, "order", 3)
    for pc in classification.irregular_points():
        i, j = pc.i, pc.j
        if not pde_mask[j, i]:
            continue
        if i < 2 or j < 2 or i > m - 3 or j > n - 3:
            raise AssemblyError(
                f"interface crosses the boundary stencil ring at node ({i}, {j})"
            )
        if not corrections_enabled:
            continue
        w_node = {off: float(weights[off][j, i]) for off in STENCIL_OFFSETS}
        try:
            routes = route_corrections(pc, classification, jumps, k=order, corner=corner)
            delta = rhs_corrections(pc, w_node, routes)
        except JumpError as exc:
            raise AssemblyError(
                f"missing jump data for node ({i}, {j}): {exc}"
            ) from exc
        if delta is None or not np.isfinite(delta):
            raise AssemblyError(f"invalid jump correction at node ({i}, {j})")
        rhs[j * m + i] += delta

    ident_rows = []
    if mask_bodies:
        rows_body = np.nonzero((interior & body).ravel())[0]
        ident_rows.append(rows_body)
        row_kind[rows_body] = ROW_BODY
        rhs[rows_body] = 0.0

    ii, jj = _boundary_nodes(grid)
    ii, jj = _resolve_corners(bc, grid, ii, jj)
    for edge in ("left", "right", "bottom", "top"):
        cond = getattr(bc, edge)
        i, j = ii[edge], jj[edge]
        if i.size == 0:
            continue
        flat = j * m + i
        x, y = grid.x[i], grid.y[j]
        if cond.kind == "dirichlet":
            ident_rows.append(flat)
            row_kind[flat] = ROW_DIRICHLET
            rhs[flat] = _edge_value(cond, x, y)
        elif cond.kind == "neumann":
            g = _edge_value(cond, x, y)
            r, c, v, g = _neumann_entries(grid, edge, i, j, g)
            row_blocks.append(r)
            col_blocks.append(c)
            dat_blocks.append(v)
            row_kind[flat] = ROW_NEUMANN
            rhs[flat] = g
        elif cond.kind == "custom":
            for ik, jk in zip(i, j):
                cols, w, g = cond.value(grid, int(ik), int(jk))
                cols = np.asarray(cols, dtype=int)
                row_blocks.append(np.full(cols.size, jk * m + ik))
                col_blocks.append(cols)
                dat_blocks.append(np.asarray(w, dtype=float))
                row_kind[jk * m + ik] = ROW_CUSTOM
                rhs[jk * m + ik] = g
        else:
            raise AssemblyError(f"unknown boundary condition kind {cond.kind!r}")

    if ident_rows:
        flat = np.concatenate(ident_rows)
        row_blocks.append(flat)
        col_blocks.append(flat)
        dat_blocks.append(np.ones(flat.size))

    rows = np.concatenate(row_blocks)
    cols = np.concatenate(col_blocks)
    data = np.concatenate(dat_blocks)
    if node_order is not None:
        p = np.asarray(node_order, dtype=int)
        if p.shape != (size,) or np.any(np.sort(p) != np.arange(size)):
            raise AssemblyError("node_order must be a permutation of all nodes")
        rows, cols = p[rows], p[cols]
        rhs_p = np.empty_like(rhs)
        rhs_p[p] = rhs
        rhs = rhs_p
        kind_p = np.empty_like(row_kind)
        kind_p[p] = row_kind
        row_kind = kind_p

    mat = sp.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsr()
    mat = _symmetrize_pattern(mat)
    return SparseSystem(matrix=mat, rhs=rhs, row_kind=row_kind)


def _symmetrize_pattern(mat: sp.csr_matrix) -> sp.csr_matrix:
    """Pad with explicit zeros so the sparsity pattern equals its transpose."""
    mat = mat.tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    pattern = mat.copy()
    pattern.data = np.ones_like(pattern.data)
    union = (pattern + pattern.T).tocsr()
    union.sort_indices()
    size = mat.shape[0]
    # CSR canonical order makes row*size+col strictly increasing, so the
    # value scatter is a single sorted search.
    ukey = np.repeat(np.arange(size, dtype=np.int64), np.diff(union.indptr))
    ukey = ukey * size + union.indices
    mkey = np.repeat(np.arange(size, dtype=np.int64), np.diff(mat.indptr))
    mkey = mkey * size + mat.indices
    data = np.zeros(union.nnz)
    data[np.searchsorted(ukey, mkey)] = mat.data
    return sp.csr_matrix((data, union.indices, union.indptr), shape=mat.shape)
