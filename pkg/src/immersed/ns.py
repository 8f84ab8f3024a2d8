"""Steady incompressible flow past immersed bodies.

The solver works in streamfunction-vorticity form on a rectangular channel
with a uniform or linear-shear stream entering at the left edge:

    laplace(psi) = -omega,        u = d psi / dy,   v = -d psi / dx,
    laplace(omega) - Re (u omega_x + v omega_y) = 0.

Bodies are closed level-set shapes held away from the channel walls; their
interior nodes are pinned to zero in every field and the no-slip condition
enters through vorticity values generated on the interface itself.  Both
elliptic problems are discretized with the compact nine-point scheme with
the interface terms transferred to the right-hand side.  Because the
surface vorticity responds to the streamfunction with a large gain, the two
fields are advanced together: each outer iteration solves one stacked
sparse system for (psi, omega) with the convection velocities frozen,
refreshes the velocities, and under-relaxes until the update stalls below a
tolerance.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from ._stencils import (compact_first_derivative, derivative_field,
                        derivative_matrix)
from .assembly import (ROW_CUSTOM, BoundarySpec, SparseSystem, custom_rows,
                       dirichlet, neumann, assemble)
from .grid import Grid, build_grid, circle, classify, ellipse
from .hoc import (STENCIL_OFFSETS, ArrayCoefficientField, hoc_letters,
                  stencil_weights)
from .jump import (JumpData, JumpError, ZeroJumpSource, route_corrections,
                   rhs_corrections)
from .linalg import bicgstab, ilu0

__all__ = [
    "FlowError", "DivergenceError", "FlowConfig", "FlowState",
    "FlowDiagnostics", "VortexCenter", "cylinder_config",
    "two_ellipse_config", "tandem_config", "shear_wall_config",
    "solve_streamfunction", "compute_velocity", "interface_vorticity",
    "surface_operator", "hessian_coupling",
    "solve_vorticity", "solve_coupled", "outer_loop", "diagnostics",
    "count_recirculation_pairs", "save_state", "load_state",
    "interpolate_state", "write_field_csv", "write_diagnostics",
]


class FlowError(Exception):
    pass


class DivergenceError(FlowError):
    """Outer iteration blew up; carries the last state and the history."""

    def __init__(self, message, state=None, history=None):
        super().__init__(message)
        self.state = state
        self.history = history


def _default_relaxation(re: float) -> float:
    if re <= 10.0:
        return 0.7
    if re <= 20.0:
        return 0.5
    return 0.3


@dataclass(frozen=True)
class FlowConfig:
    """Channel-flow problem definition.

    The domain is [-x_e, x_r] x [y_bottom, y_bottom + ht] with the body
    diameters as the unit of length; y_bottom defaults to -ht/2 so the
    channel is centered on the x-axis.  inlet selects the incoming stream:
    "uniform" (u = 1) or "linear-shear" (u = shear * y, which also sets the
    far-field vorticity to -shear).  wall_bottom turns the bottom edge into
    a no-slip wall closed by a one-sided vorticity relation instead of a
    free-slip frame edge.  lam is the vorticity under-relaxation factor;
    None picks a default that tightens as Re grows.
    """

    re: float
    bodies: tuple = ()
    x_e: float = 10.0
    x_r: float = 25.0
    ht: float = 30.0
    y_bottom: float | None = None
    m: int = 241
    n: int = 161
    lam: float | None = None
    omega_tol: float = 5e-10
    inlet: str = "uniform"
    shear: float = 1.0
    wall_bottom: bool = False
    max_outer: int = 30000
    inner_tol: float = 1e-13

    def __post_init__(self):
        if not self.re > 0.0:
            raise FlowError(f"Reynolds number must be positive, got {self.re}")
        if self.lam is not None and not 0.0 < self.lam <= 1.0:
            raise FlowError(f"relaxation factor must lie in (0, 1], got {self.lam}")
        if self.inlet not in ("uniform", "linear-shear"):
            raise FlowError(f"unknown inlet profile {self.inlet!r}")
        if self.m < 8 or self.n < 8:
            raise FlowError("grid must have at least 8 nodes per direction")
        if self.x_e <= 0.0 or self.x_r <= 0.0 or self.ht <= 0.0:
            raise FlowError("domain extents must be positive")

    @property
    def relaxation(self) -> float:
        return self.lam if self.lam is not None else _default_relaxation(self.re)

    @property
    def box(self) -> tuple[float, float, float, float]:
        y0 = -0.5 * self.ht if self.y_bottom is None else self.y_bottom
        return (-self.x_e, self.x_r, y0, y0 + self.ht)

    def build(self):
        """Grid and interface classification for this configuration."""
        x0, xf, y0, yf = self.box
        grid = build_grid(x0, xf, y0, yf, self.m, self.n)
        return grid, classify(grid, list(self.bodies))


def cylinder_config(re: float, **overrides) -> FlowConfig:
    """Uniform stream past a unit-diameter cylinder at the origin."""
    overrides.setdefault("bodies", (circle(0.0, 0.0, 0.5),))
    return FlowConfig(re=re, **overrides)


def two_ellipse_config(re: float = 10.0, *, spacing: float = 1.0 / 40.0,
                       **overrides) -> FlowConfig:
    """Uniform stream past two tilted unit-major-axis ellipses.

    The slenderer ellipse (axis ratio 1/4) sits upstream above the axis at
    135 degrees to the stream; the fuller one (ratio 1/3) sits four
    diameters downstream below the axis at 45 degrees.  spacing sets the
    nominal mesh width of the default grid covering x in [-3, 7] and
    y in [-2.5, 2.5].
    """
    overrides.setdefault("bodies", (
        ellipse(0.0, 0.5, 0.5, 0.125, tilt=3.0 * math.pi / 4.0),
        ellipse(4.0, -0.5, 0.5, 1.0 / 6.0, tilt=math.pi / 4.0),
    ))
    overrides.setdefault("x_e", 3.0)
    overrides.setdefault("x_r", 7.0)
    overrides.setdefault("ht", 5.0)
    overrides.setdefault("m", int(round(10.0 / spacing)) + 1)
    overrides.setdefault("n", int(round(5.0 / spacing)) + 1)
    return FlowConfig(re=re, **overrides)


def tandem_config(gap: float, re: float = 0.01, **overrides) -> FlowConfig:
    """Two unit-diameter cylinders in tandem, surfaces gap diameters apart,
    centered about the origin in a creeping stream."""
    half = 0.5 * (1.0 + gap)
    overrides.setdefault("bodies", (circle(-half, 0.0, 0.5),
                                    circle(half, 0.0, 0.5)))
    overrides.setdefault("x_e", 6.0)
    overrides.setdefault("x_r", 6.0)
    overrides.setdefault("ht", 12.0)
    overrides.setdefault("m", 241)
    overrides.setdefault("n", 241)
    return FlowConfig(re=re, **overrides)


def shear_wall_config(gap: float, re: float = 0.011, shear: float = 1.0,
                      **overrides) -> FlowConfig:
    """Linear-shear stream over a no-slip plane wall with a unit-diameter
    cylinder suspended gap diameters above it."""
    overrides.setdefault("bodies", (circle(0.0, 0.5 + gap, 0.5),))
    overrides.setdefault("x_e", 6.0)
    overrides.setdefault("x_r", 6.0)
    overrides.setdefault("ht", 6.0)
    overrides.setdefault("y_bottom", 0.0)
    overrides.setdefault("m", 241)
    overrides.setdefault("n", 121)
    overrides.setdefault("inlet", "linear-shear")
    overrides.setdefault("wall_bottom", True)
    return FlowConfig(re=re, shear=shear, **overrides)


@dataclass
class FlowState:
    """Solution fields on the configuration grid (row-major, y index first).

    All four fields are exactly zero on nodes inside a body.  history holds
    one (iteration, max |d psi|, max |d omega|) triple per outer iteration
    and is not part of the checkpoint format.
    """

    psi: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    v: np.ndarray
    outer_iter: int = 0
    omega_delta: float = math.inf
    history: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class VortexCenter:
    """Stationary point of psi inside a recirculation region."""

    x: float
    y: float
    psi: float
    omega: float


@dataclass(frozen=True)
class FlowDiagnostics:
    """Scalar flow measures extracted from a converged state.

    wake_length is the centerline distance from the rear surface point to
    the downstream stagnation point; separation_angle_deg is measured at
    the body center from the positive x-axis to the point where the surface
    vorticity changes sign; drag_coefficient comes from a control-volume
    momentum balance over the whole channel.
    """

    wake_length: float
    separation_angle_deg: float
    drag_coefficient: float
    vortex_centers: tuple
    omega_max: float

    def __post_init__(self):
        if self.wake_length < 0.0:
            raise FlowError(f"wake length must be nonnegative, got {self.wake_length}")
        if not 0.0 <= self.separation_angle_deg <= 90.0:
            raise FlowError(
                f"separation angle must lie in [0, 90] degrees, got "
                f"{self.separation_angle_deg}")


def _stream_profile(config: FlowConfig):
    if config.inlet == "uniform":
        return lambda x, y: np.asarray(y, dtype=float)
    k = config.shear
    return lambda x, y: 0.5 * k * np.asarray(y, dtype=float) ** 2


def _inlet_vorticity(config: FlowConfig) -> float:
    return 0.0 if config.inlet == "uniform" else -config.shear


def _psi_boundary(config: FlowConfig) -> BoundarySpec:
    g = _stream_profile(config)
    return BoundarySpec(left=dirichlet(g), right=neumann(0.0),
                        bottom=dirichlet(g), top=dirichlet(g))


def _wall_vorticity_rows(psi: np.ndarray, grid: Grid):
    """No-slip closure along the bottom wall: the first-order one-sided
    streamfunction relation  d+psi/dy + (l/2) w0 + (l^2/6) d+w/dy = 0  with
    psi = 0 on the wall collapses to  2 w(i,0) + w(i,1) = -6 psi(i,1)/l^2."""
    scale = -6.0 / grid.l**2

    def builder(g, i, j):
        return [i, i + g.m], [2.0, 1.0], scale * psi[1, i]

    return builder


def _omega_boundary(config: FlowConfig, psi: np.ndarray, grid: Grid) -> BoundarySpec:
    w_in = _inlet_vorticity(config)
    bottom = (custom_rows(_wall_vorticity_rows(psi, grid))
              if config.wall_bottom else dirichlet(w_in))
    return BoundarySpec(left=dirichlet(w_in), right=neumann(0.0),
                        bottom=bottom, top=dirichlet(w_in))


def _solve(system, x0, tol, precond):
    x, report = bicgstab(system, x0=x0, tol=tol, precond=precond)
    if not np.all(np.isfinite(x)):
        raise FlowError("inner solve produced non-finite values")
    return x, report


def solve_streamfunction(grid: Grid, classification, omega: np.ndarray,
                         config: FlowConfig, *, x0=None):
    """One streamfunction update: laplace(psi) = -omega on the fluid nodes,
    zero jumps at the interface, body interior masked."""
    valid = ~classification.in_body
    f = -omega
    fields = ArrayCoefficientField(
        grid, f=f,
        f_x=derivative_field(f, grid.h, 1, 1, valid=valid),
        f_y=derivative_field(f, grid.l, 0, 1, valid=valid),
        f_xx=derivative_field(f, grid.h, 1, 2, valid=valid),
        f_yy=derivative_field(f, grid.l, 0, 2, valid=valid),
    )
    system = assemble(grid, classification, fields, ZeroJumpSource(),
                      _psi_boundary(config), mask_bodies=True)
    x, _ = _solve(system, None if x0 is None else x0.ravel(),
                  config.inner_tol, ilu0(system))
    return x.reshape(grid.shape)


def compute_velocity(grid: Grid, psi: np.ndarray, in_body=None):
    """Velocities from the streamfunction by compact fourth-order
    differentiation along fluid runs; body nodes stay zero."""
    valid = None if in_body is None else ~np.asarray(in_body, dtype=bool)
    u = compact_first_derivative(psi, grid.l, 0, valid=valid)
    v = -compact_first_derivative(psi, grid.h, 1, valid=valid)
    if in_body is not None:
        u[in_body] = 0.0
        v[in_body] = 0.0
    return u, v


def _neg_laplacian_stencil(valid, i, j, grid):
    """Stencil of -laplace at a fluid node as {flat index: weight}, using,
    per axis, the central O(h^2) difference when both neighbors are fluid
    and the one-sided O(h^2) difference stepping away from the body
    otherwise."""
    n, m = valid.shape
    out: dict = {}
    for along_x, spacing in ((True, grid.h), (False, grid.l)):
        if along_x:
            pos = i
            ok = lambda k: 0 <= k < m and valid[j, k]
            flat = lambda k: j * m + k
        else:
            pos = j
            ok = lambda k: 0 <= k < n and valid[k, i]
            flat = lambda k: k * m + i
        if ok(pos - 1) and ok(pos + 1):
            terms = ((pos - 1, 1.0), (pos, -2.0), (pos + 1, 1.0))
        else:
            step = 1 if ok(pos + 1) else (-1 if ok(pos - 1) else 0)
            if step == 0:
                raise FlowError(
                    f"node ({i}, {j}) has no fluid neighbors along an axis; "
                    "the body resolution is too coarse")
            k1, k2, k3 = pos + step, pos + 2 * step, pos + 3 * step
            if ok(k2) and ok(k3):
                terms = ((pos, 2.0), (k1, -5.0), (k2, 4.0), (k3, -1.0))
            elif ok(k2):
                terms = ((pos, 1.0), (k1, -2.0), (k2, 1.0))
            else:
                raise FlowError(
                    f"node ({i}, {j}) sits on a fluid sliver thinner than "
                    "three cells; refine the grid")
        scale = -1.0 / spacing**2
        for k, w in terms:
            key = flat(k)
            out[key] = out.get(key, 0.0) + scale * w
    return out


def _five_point_stencil(valid, i, j, grid):
    """Stencil of -laplace by the five-point formula when the full cross of
    neighbors is fluid, falling back to the one-sided builder."""
    n, m = valid.shape
    if (0 < i < m - 1 and 0 < j < n - 1
            and valid[j, i - 1] and valid[j, i + 1]
            and valid[j - 1, i] and valid[j + 1, i]):
        ax, ay = -1.0 / grid.h**2, -1.0 / grid.l**2
        return {j * m + i - 1: ax, j * m + i + 1: ax,
                (j - 1) * m + i: ay, (j + 1) * m + i: ay,
                j * m + i: -2.0 * (ax + ay)}
    return _neg_laplacian_stencil(valid, i, j, grid)


def _merge(*weighted):
    """Linear combination of stencils: _merge((s1, a1), (s2, a2), ...)."""
    out: dict = {}
    for stencil, factor in weighted:
        for key, w in stencil.items():
            out[key] = out.get(key, 0.0) + factor * w
    return out


def _diagonal_key(x: float, y: float):
    return ("d", round(x, 9), round(y, 9))


def _crossing_key(crossing):
    if crossing.axis == "d":
        return _diagonal_key(crossing.x, crossing.y)
    return (crossing.axis, crossing.i, crossing.j)


class SurfaceOperator:
    """Linear surface-vorticity structure of one classified grid.

    keys enumerates the interface unknowns, one per cut grid segment plus
    one per orphan diagonal crossing.  grad_x/grad_y are sparse
    (crossings x nodes) maps from a streamfunction field to the Cartesian
    slope of -laplace(psi) along each probing line; they feed the linear
    ghost extension of the vorticity across the interface.  fit_psi and
    fit_w state the no-slip condition itself,

        fit_psi @ psi + fit_w @ w = 0,

    each row fitting the near-wall streamfunction along the surface normal
    with zero value and zero slope built in, so w is the surface vorticity
    that makes the fitted wall curvature consistent with no slip.  All
    maps are linear: they can be solved against a given field
    (interface_vorticity) or embedded as rows of the stacked flow system
    (solve_coupled).
    """

    def __init__(self, keys, grad_x, grad_y, fit_psi, fit_w):
        self.keys = list(keys)
        self.index = {key: k for k, key in enumerate(self.keys)}
        self.grad_x = grad_x
        self.grad_y = grad_y
        self.fit_psi = fit_psi
        self.fit_w = fit_w

    def vorticity(self, psi: np.ndarray) -> np.ndarray:
        """Surface vorticity solving the no-slip fit for a given field."""
        if not self.keys:
            return np.zeros(0)
        return spla.spsolve(self.fit_w.tocsc(), -self.fit_psi @ psi.ravel())

    def table(self, psi: np.ndarray) -> dict:
        flat = psi.ravel()
        vals = self.vorticity(psi)
        gxs = self.grad_x @ flat
        gys = self.grad_y @ flat
        return {key: (vals[k], gxs[k], gys[k])
                for k, key in enumerate(self.keys)}


def _lagrange4(t: float):
    """Weights of cubic Lagrange interpolation at parameter t in [0, 1)
    over nodes at -1, 0, 1, 2."""
    return (-t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0)


def surface_operator(grid: Grid, classification) -> SurfaceOperator:
    """Build the surface-vorticity structure for a classified grid.

    One unknown per interface crossing: the crossing records' (axis, i, j)
    keys plus ("d", x, y) keys (coordinates rounded to nine decimals) for
    diagonal stencil legs whose corner neighbor has no same-axis record.

    Slope rows: -laplace(psi) is formed at the fluid endpoint of the cut
    segment (one-sided differences stepping away from the body) and at the
    next fluid node outward (five-point), and their difference quotient
    along the line is resolved into Cartesian components.

    No-slip fit rows: the streamfunction is sampled by cubic Lagrange
    interpolation at two points along the surface normal, one and two
    cells out.  A cubic profile psi(s) = a s^2/2 + b s^3/6 -- zero value
    and zero slope at the wall built in -- is fitted through the samples,
    and the wall curvature must match the surface vorticity: a + w = 0,
    since the rigid-wall Hessian reduces to psi_nn = -omega along the
    normal.  Interpolation stencils reaching inside the body use the
    smooth extension psi ~= -w sd^2/2 - (d omega/dn) sd^3/6 at signed
    distance sd, with w and the normal slope taken from the
    Gaussian-weighted nearby crossings, which keeps the rows linear in
    (psi, w) and symmetric under mirror-symmetric geometry.
    """
    from .jump import diagonal_crossing

    valid = ~classification.in_body
    n, m = grid.shape
    size = n * m
    keys: list = []
    geometry: list = []
    rows_gx: list = []
    rows_gy: list = []

    def slope_probe(i0, j0, di, dj):
        span = math.hypot(di * grid.h, dj * grid.l)
        i1, j1 = i0 + di, j0 + dj
        if not (0 <= i1 < m and 0 <= j1 < n and valid[j1, i1]):
            return {}, {}
        lap0 = _neg_laplacian_stencil(valid, i0, j0, grid)
        lap1 = _five_point_stencil(valid, i1, j1, grid)
        slope = _merge((lap1, 1.0 / span), (lap0, -1.0 / span))
        return (_merge((slope, di * grid.h / span)),
                _merge((slope, dj * grid.l / span)))

    for (axis, i, j), c in classification.crossings.items():
        if axis == "x":
            ends = ((i, j), (i + 1, j))
        else:
            ends = ((i, j), (i, j + 1))
        fluid = [(ei, ej) for ei, ej in ends if valid[ej, ei]]
        if not fluid:
            continue
        ei, ej = fluid[0]
        if axis == "x":
            step = (1, 0) if ei == i + 1 else (-1, 0)
        else:
            step = (0, 1) if ej == j + 1 else (0, -1)
        keys.append((axis, i, j))
        geometry.append((c.x, c.y, c.theta, c.body))
        gx, gy = slope_probe(ei, ej, step[0], step[1])
        rows_gx.append(gx)
        rows_gy.append(gy)

    seen: set = set()
    for pc in classification.irregular_points():
        if pc.side != 1:
            continue
        for da in (-1, 0, 1):
            for db in (-1, 0, 1):
                if (da == 0 and db == 0) or abs(da) + abs(db) != 2:
                    continue
                if pc.sides[1 + db, 1 + da] == 1:
                    continue
                if pc.sides[1 + db, 1] == 1 or pc.sides[1, 1 + da] == 1:
                    continue  # a same-axis route exists; no diagonal needed
                c = diagonal_crossing(classification, pc, da, db)
                key = _diagonal_key(c.x, c.y)
                if key in seen:
                    continue
                seen.add(key)
                keys.append(key)
                geometry.append((c.x, c.y, c.theta, c.body))
                gx, gy = slope_probe(pc.i, pc.j, -da, -db)
                rows_gx.append(gx)
                rows_gy.append(gy)

    def build(rows, width):
        mat = sp.lil_matrix((len(rows), width))
        for r, stencil in enumerate(rows):
            for flat, w in stencil.items():
                mat[r, flat] = w
        return mat.tocsr()

    count = len(keys)
    grad_x = build(rows_gx, size)
    grad_y = build(rows_gy, size)

    d = max(grid.h, grid.l)
    span0, span1 = d, 2.0 * d
    det = span0**2 * span1**2 * (span1 - span0)
    # a = c0 psi(span0) + c1 psi(span1) recovers psi_nn(0) exactly for any
    # cubic with zero value and slope at the wall
    sample_coef = (2.0 * span1**3 / det, -2.0 * span0**3 / det)

    by_body: dict = {}
    for k, (x, y, _, body) in enumerate(geometry):
        by_body.setdefault(body, []).append(k)
    trees = {body: (cKDTree(np.array([[geometry[k][0], geometry[k][1]]
                                      for k in ks])), ks)
             for body, ks in by_body.items()}

    fit_psi = sp.lil_matrix((count, size))
    fit_w = sp.lil_matrix((count, count))
    ghost_cache: dict = {}

    def ghost(ii, jj):
        """Smooth extension of the fluid streamfunction at a body node, as
        (w columns, w weights, psi row) of its linearization."""
        cached = ghost_cache.get((ii, jj))
        if cached is not None:
            return cached
        bid = int(classification.body_id[jj, ii])
        body = classification.bodies[bid]
        px, py = float(grid.x[ii]), float(grid.y[jj])
        gpx, gpy = body.grad_phi(px, py)
        gnorm = math.hypot(float(gpx), float(gpy))
        if gnorm == 0.0:
            raise FlowError(
                f"degenerate level-set gradient at body node ({ii}, {jj})")
        sd = float(body.phi(px, py)) / gnorm
        tr, ks = trees[bid]
        near = tr.query_ball_point([px, py], 2.5 * d)
        if not near:
            near = [int(tr.query([px, py])[1])]
        dists = np.array([math.hypot(px - geometry[ks[t]][0],
                                     py - geometry[ks[t]][1])
                          for t in near])
        gauss = np.exp(-((dists / d) ** 2))
        gauss /= gauss.sum()
        wcols = [ks[t] for t in near]
        wvals = (-0.5 * sd * sd) * gauss
        psi_row: dict = {}
        cubic = -sd**3 / 6.0
        for weight, t in zip(gauss, near):
            kc = ks[t]
            ctheta = geometry[kc][2]
            ncx, ncy = math.cos(ctheta), math.sin(ctheta)
            for mat, comp in ((grad_x, ncx), (grad_y, ncy)):
                row = mat.getrow(kc)
                for col, val in zip(row.indices, row.data):
                    psi_row[col] = (psi_row.get(col, 0.0)
                                    + cubic * weight * comp * val)
        out = (wcols, wvals, psi_row)
        ghost_cache[(ii, jj)] = out
        return out

    for k, (cx, cy, theta, body) in enumerate(geometry):
        fit_w[k, k] += 1.0
        ncx, ncy = math.cos(theta), math.sin(theta)
        for s, cf in zip((span0, span1), sample_coef):
            px, py = cx + s * ncx, cy + s * ncy
            fi = (px - grid.x0) / grid.h
            fj = (py - grid.y0) / grid.l
            i0, j0 = int(math.floor(fi)), int(math.floor(fj))
            if not (1 <= i0 < m - 2 and 1 <= j0 < n - 2):
                raise FlowError(
                    "surface sample falls outside the interpolable region; "
                    "the body sits too close to the channel boundary")
            wx = _lagrange4(fi - i0)
            wy = _lagrange4(fj - j0)
            for bj in range(4):
                for bi in range(4):
                    wgt = cf * wx[bi] * wy[bj]
                    if wgt == 0.0:
                        continue
                    ii, jj = i0 - 1 + bi, j0 - 1 + bj
                    if valid[jj, ii]:
                        fit_psi[k, jj * m + ii] += wgt
                    else:
                        wcols, wvals, psi_row = ghost(ii, jj)
                        for col, val in zip(wcols, wvals):
                            fit_w[k, col] += wgt * val
                        for col, val in psi_row.items():
                            fit_psi[k, col] += wgt * val

    return SurfaceOperator(keys, grad_x, grad_y, fit_psi.tocsr(),
                           fit_w.tocsr())


def interface_vorticity(grid: Grid, classification, psi: np.ndarray, *,
                        operator: SurfaceOperator | None = None) -> dict:
    """Vorticity on the body surface, one record per cut grid segment.

    Each entry is (value, slope_x, slope_y): the no-slip surface value and
    the Cartesian gradient of the -laplace(psi) line along the probing
    direction (see surface_operator).  Pass a prebuilt operator to skip
    reconstructing it."""
    if operator is None:
        operator = surface_operator(grid, classification)
    return operator.table(psi)


class _UnitSurfaceHessian:
    """Streamfunction jumps against the rigid (identically zero) interior,
    vector-valued over the surface vorticity unknowns.

    No penetration and no slip make psi and its gradient continuous across
    the surface, so the first nonzero jump is the Hessian, fixed by the
    field equation: [laplace(psi)] = -[omega] with zero tangential
    curvature gives [H] = -omega_surface * (n outer n).  Each jump entry
    is returned as a basis vector scaled by the Hessian component, so the
    correction machinery -- linear in the jump data throughout -- emits
    per-node rows of the map from surface vorticity to right-hand-side
    increments.
    """

    order = 2

    def __init__(self, operator: SurfaceOperator):
        self.operator = operator

    def jumps_for(self, crossing) -> JumpData:
        key = _crossing_key(crossing)
        k = self.operator.index.get(key)
        if k is None:
            raise JumpError(
                f"no surface vorticity unknown for crossing {key}")
        count = len(self.operator.keys)
        nx, ny = math.cos(crossing.theta), math.sin(crossing.theta)
        # every slot is array-valued so the correction sums stay vectorized
        slots = [np.zeros(count) for _ in range(15)]
        slots[3][k] = -nx * nx   # uxx
        slots[4][k] = -nx * ny   # uxy
        slots[5][k] = -ny * ny   # uyy
        return JumpData(*slots)


class _UnitSurfaceRecord:
    """Vorticity jumps against the rigid (identically zero) interior,
    vector-valued over the stacked surface unknowns (value, x-slope,
    y-slope).  The jump at a crossing is the surface record itself, so
    each slot is a basis vector and the correction sums -- linear in the
    jump data throughout -- emit per-node rows of the map from surface
    records to transport right-hand-side increments."""

    order = 1

    def __init__(self, operator: SurfaceOperator):
        self.operator = operator

    def jumps_for(self, crossing) -> JumpData:
        key = _crossing_key(crossing)
        k = self.operator.index.get(key)
        if k is None:
            raise JumpError(
                f"no surface vorticity unknown for crossing {key}")
        count = len(self.operator.keys)
        slots = [np.zeros(3 * count) for _ in range(15)]
        slots[0][k] = 1.0                # u
        slots[1][count + k] = 1.0        # ux
        slots[2][2 * count + k] = 1.0    # uy
        return JumpData(*slots)


def _jump_rhs_matrix(grid: Grid, classification, source, weights,
                     width: int) -> sp.csr_matrix:
    """Interface corrections for a vector-valued jump source as a sparse
    map from the source's unknowns to right-hand-side increments, visiting
    exactly the irregular fluid rows the assembler corrects."""
    n, m = grid.shape
    pde_mask = np.zeros((n, m), dtype=bool)
    pde_mask[1:-1, 1:-1] = True
    pde_mask &= ~classification.in_body
    rows: list = []
    cols: list = []
    data: list = []
    for pc in classification.irregular_points():
        i, j = pc.i, pc.j
        if not pde_mask[j, i]:
            continue
        w_node = {off: float(weights[off][j, i]) for off in STENCIL_OFFSETS}
        routes = route_corrections(pc, classification, source, k=source.order)
        delta = np.asarray(rhs_corrections(pc, w_node, routes))
        if delta.ndim == 0:
            continue
        nz = np.nonzero(delta)[0]
        rows.extend([j * m + i] * nz.size)
        cols.extend(nz.tolist())
        data.extend(delta[nz].tolist())
    return sp.csr_matrix((data, (rows, cols)), shape=(n * m, width))


def _unit_stencil_weights(grid: Grid):
    n, m = grid.shape
    vals = ArrayCoefficientField(grid).evaluate_on(None, None, None)
    letters = hoc_letters(vals, grid.h, grid.l)
    return {off: np.broadcast_to(np.asarray(w, dtype=float), (n, m))
            for off, w in stencil_weights(letters, grid.h, grid.l).items()}


def hessian_coupling(grid: Grid, classification,
                     operator: SurfaceOperator) -> sp.csr_matrix:
    """Map from surface vorticity to streamfunction right-hand sides.

    The streamfunction jumps against the rigid interior are pure Hessian
    jumps scaled by the surface vorticity, so the interface corrections of
    the Poisson solve are B w for a geometry-only matrix B, built by
    feeding unit-vector jumps through the same correction path the
    assembler uses."""
    return _jump_rhs_matrix(grid, classification,
                            _UnitSurfaceHessian(operator),
                            _unit_stencil_weights(grid), len(operator.keys))


class _SurfaceVorticitySource:
    """Jump source feeding the interfacial vorticity records as first-order
    jumps: the body side of the field is identically zero, so the jump in
    omega at a crossing equals the surface value itself and the jump in its
    gradient equals the fluid-side linear-model slope.  Keeping the slope
    makes the ghost extension linear, which pins the effective location of
    the surface condition to the interface instead of the ghost node."""

    order = 1

    def __init__(self, table: dict):
        self.table = table

    def jumps_for(self, crossing) -> JumpData:
        if crossing.axis == "d":
            key = _diagonal_key(crossing.x, crossing.y)
        else:
            key = (crossing.axis, crossing.i, crossing.j)
        if key not in self.table:
            raise JumpError(
                f"no surface vorticity recorded for crossing {key}")
        value, gx, gy = self.table[key]
        return JumpData(u=value, ux=gx, uy=gy)


def _transport_fields(grid: Grid, classification, u: np.ndarray,
                      v: np.ndarray, re: float) -> ArrayCoefficientField:
    """Coefficients of laplace(omega) - Re (u omega_x + v omega_y) = 0."""
    valid = ~classification.in_body
    c = -re * u
    d = -re * v
    return ArrayCoefficientField(
        grid, c=c, d=d,
        c_x=derivative_field(c, grid.h, 1, 1, valid=valid),
        c_y=derivative_field(c, grid.l, 0, 1, valid=valid),
        c_xx=derivative_field(c, grid.h, 1, 2, valid=valid),
        c_yy=derivative_field(c, grid.l, 0, 2, valid=valid),
        d_x=derivative_field(d, grid.h, 1, 1, valid=valid),
        d_y=derivative_field(d, grid.l, 0, 1, valid=valid),
        d_xx=derivative_field(d, grid.h, 1, 2, valid=valid),
        d_yy=derivative_field(d, grid.l, 0, 2, valid=valid),
    )


def solve_vorticity(grid: Grid, classification, u: np.ndarray, v: np.ndarray,
                    surface: dict, config: FlowConfig, psi: np.ndarray, *,
                    x0=None):
    """One vorticity transport update:
    laplace(omega) - Re (u omega_x + v omega_y) = 0 with surface values
    entering through the right-hand-side interface corrections."""
    fields = _transport_fields(grid, classification, u, v, config.re)
    system = assemble(grid, classification, fields,
                      _SurfaceVorticitySource(surface),
                      _omega_boundary(config, psi, grid), mask_bodies=True)
    x, _ = _solve(system, None if x0 is None else x0.ravel(),
                  config.inner_tol, ilu0(system))
    return x.reshape(grid.shape)


def solve_coupled(grid: Grid, classification, u: np.ndarray, v: np.ndarray,
                  config: FlowConfig, operator: SurfaceOperator, cache: dict,
                  psi: np.ndarray, omega: np.ndarray, w: np.ndarray):
    """One monolithic update of (psi, omega, w) with frozen velocities.

    Solving the fields sequentially feeds the surface vorticity w into the
    other equations one iteration late, and near the body that lag
    amplifies with a gain far above one, so the update cycles or blows up
    at any practical relaxation.  Stacking the unknowns removes the lag:

        [ A_psi            M         -B_H   ] [ psi   ]   [ b_psi   ]
        [ -G + W_wall      A_omega   -B_v   ] [ omega ] = [ b_omega ]
        [ fit_psi          0         fit_w  ] [ w     ]   [ 0       ]

    The streamfunction rows see omega through the compact source filter
    M = I + (h^2/12) dxx + (l^2/12) dyy applied to f = -omega and the
    surface vorticity through the Hessian-jump corrections B_H.  The
    transport rows see w through the value part of the interface
    corrections B_v, the streamfunction through their slope part
    G = B_gx grad_x + B_gy grad_y and the bottom-wall closure W_wall.
    The last rows are the no-slip fit.  Only the convection coefficients
    u, v lag one outer iteration, a plain Picard linearization of the
    advection term.  Geometry-fixed pieces persist in cache; the
    transport-side corrections are rebuilt per call because the nine-point
    weights carry u, v.

    Returns (psi, omega, w) of the solved stacked system.
    """
    n, m = grid.shape
    size = n * m
    count = len(operator.keys)
    if "psi_block" not in cache:
        system = assemble(grid, classification, ArrayCoefficientField(grid),
                          ZeroJumpSource(), _psi_boundary(config),
                          mask_bodies=True)
        valid = ~classification.in_body
        pde = np.zeros((n, m), dtype=bool)
        pde[1:-1, 1:-1] = True
        pde &= valid
        filt = (sp.identity(size, format="csr")
                + (grid.h**2 / 12.0)
                * derivative_matrix(grid.shape, grid.h, 1, 2, valid=valid)
                + (grid.l**2 / 12.0)
                * derivative_matrix(grid.shape, grid.l, 0, 2, valid=valid))
        filt = (sp.diags(pde.ravel().astype(float)) @ filt).tocsr()
        b_h = (hessian_coupling(grid, classification, operator)
               if count else None)
        cache["psi_block"] = (system.matrix, filt, system.rhs, b_h)
    a_psi, filt, rhs_psi, b_h = cache["psi_block"]

    fields = _transport_fields(grid, classification, u, v, config.re)
    system = assemble(grid, classification, fields, ZeroJumpSource(),
                      _omega_boundary(config, np.zeros(grid.shape), grid),
                      mask_bodies=True)
    lower_psi = None
    b_v = None
    if count:
        vals = fields.evaluate_on(None, None, None)
        letters = hoc_letters(vals, grid.h, grid.l)
        weights = {off: np.broadcast_to(np.asarray(wt, dtype=float), (n, m))
                   for off, wt in
                   stencil_weights(letters, grid.h, grid.l).items()}
        b3 = _jump_rhs_matrix(grid, classification,
                              _UnitSurfaceRecord(operator), weights,
                              3 * count).tocsc()
        b_v = b3[:, :count].tocsr()
        lower_psi = -(b3[:, count:2 * count] @ operator.grad_x
                      + b3[:, 2 * count:] @ operator.grad_y).tocsr()
    if config.wall_bottom:
        wall = np.nonzero(system.row_kind == ROW_CUSTOM)[0]
        wall_mat = sp.csr_matrix(
            (np.full(wall.size, 6.0 / grid.l**2), (wall, wall + m)),
            shape=(size, size))
        lower_psi = (wall_mat if lower_psi is None
                     else (lower_psi + wall_mat).tocsr())

    if count:
        blocks = [[a_psi, filt, -b_h],
                  [lower_psi, system.matrix, -b_v],
                  [operator.fit_psi, None, operator.fit_w]]
        rhs = np.concatenate([rhs_psi, system.rhs, np.zeros(count)])
        x0 = np.concatenate([psi.ravel(), omega.ravel(), w])
    else:
        blocks = [[a_psi, filt], [lower_psi, system.matrix]]
        rhs = np.concatenate([rhs_psi, system.rhs])
        x0 = np.concatenate([psi.ravel(), omega.ravel()])
    block = sp.bmat(blocks, format="csr")
    stacked = SparseSystem(matrix=block, rhs=rhs,
                           row_kind=np.zeros(block.shape[0], dtype=np.int8))
    x, _ = _solve(stacked, x0, config.inner_tol, ilu0(block))
    return (x[:size].reshape(grid.shape),
            x[size:2 * size].reshape(grid.shape), x[2 * size:])


def _initial_state(grid: Grid, config: FlowConfig, in_body) -> FlowState:
    X, Y = grid.meshgrid()
    psi = _stream_profile(config)(X, Y)
    omega = np.full(grid.shape, _inlet_vorticity(config))
    psi[in_body] = 0.0
    omega[in_body] = 0.0
    u, v = compute_velocity(grid, psi, in_body)
    return FlowState(psi=psi, omega=omega, u=u, v=v)


def outer_loop(config: FlowConfig, warm_start: FlowState | None = None,
               callback=None):
    """Iterate the coupled solves to a steady state.

    Returns (state, diagnostics); diagnostics is None when the iteration
    cap is reached before the vorticity update drops below omega_tol.
    Raises DivergenceError when the update grows tenfold over a hundred
    iterations.  warm_start seeds the fields from a previous state on the
    same grid; callback(iteration, d_psi, d_omega) is invoked per iteration.
    """
    grid, classification = config.build()
    in_body = classification.in_body
    if warm_start is not None:
        if warm_start.psi.shape != grid.shape:
            raise FlowError(
                f"warm start shape {warm_start.psi.shape} does not match "
                f"the configuration grid {grid.shape}")
        psi = warm_start.psi.copy()
        omega = warm_start.omega.copy()
        psi[in_body] = 0.0
        omega[in_body] = 0.0
    else:
        init = _initial_state(grid, config, in_body)
        psi, omega = init.psi, init.omega

    lam = config.relaxation
    cache: dict = {}
    history: list = []
    d_omega = math.inf
    it = 0
    operator = surface_operator(grid, classification)
    u, v = compute_velocity(grid, psi, in_body)
    w = np.zeros(len(operator.keys))
    for it in range(1, config.max_outer + 1):
        psi_star, omega_star, w_star = solve_coupled(
            grid, classification, u, v, config, operator, cache,
            psi, omega, w)
        psi_new = lam * psi_star + (1.0 - lam) * psi
        omega_new = lam * omega_star + (1.0 - lam) * omega
        w = lam * w_star + (1.0 - lam) * w
        psi_new[in_body] = 0.0
        omega_new[in_body] = 0.0
        u, v = compute_velocity(grid, psi_new, in_body)
        d_psi = float(np.abs(psi_new - psi).max())
        d_omega = float(np.abs(omega_new - omega).max())
        history.append((it, d_psi, d_omega))
        psi, omega = psi_new, omega_new
        if callback is not None:
            callback(it, d_psi, d_omega)
        if not math.isfinite(d_omega):
            raise DivergenceError(
                f"vorticity update became non-finite at iteration {it}",
                state=FlowState(psi, omega, u, v, it, d_omega, history),
                history=history)
        if d_omega <= config.omega_tol:
            break
        if it > 100:
            base = history[it - 101][2]
            if base > 0.0 and d_omega > 10.0 * base:
                raise DivergenceError(
                    f"vorticity update grew from {base:.3e} to {d_omega:.3e} "
                    f"over the last 100 iterations (iteration {it})",
                    state=FlowState(psi, omega, u, v, it, d_omega, history),
                    history=history)

    u, v = compute_velocity(grid, psi, in_body)
    state = FlowState(psi=psi, omega=omega, u=u, v=v, outer_iter=it,
                      omega_delta=d_omega, history=history)
    diag = None
    if d_omega <= config.omega_tol:
        diag = diagnostics(state, config, grid, classification)
    return state, diag


def _body_centroids(classification) -> dict:
    pts: dict = {}
    for c in classification.crossings.values():
        pts.setdefault(c.body, []).append((c.x, c.y))
    return {b: (np.mean([p[0] for p in ps]), np.mean([p[1] for p in ps]))
            for b, ps in pts.items()}


def _wake_length(state, grid, classification, body, centroid) -> float:
    cx, cy = centroid
    j0 = int(round((cy - grid.y0) / grid.l))
    if not 0 <= j0 < grid.n or abs(grid.y[j0] - cy) > 0.51 * grid.l:
        return 0.0
    rear = [c.x for (axis, i, j), c in classification.crossings.items()
            if axis == "x" and j == j0 and c.body == body]
    if not rear:
        return 0.0
    xs = max(rear)
    u = state.u[j0]
    idx = np.nonzero((grid.x > xs) & (u < 0.0)
                     & ~classification.in_body[j0])[0]
    if idx.size == 0:
        return 0.0
    k = int(idx.max())
    if k + 1 >= grid.m:
        return float(grid.x[k] - xs)
    x_zero = grid.x[k] + grid.h * u[k] / (u[k] - u[k + 1])
    return float(x_zero - xs)


def _separation_angle(surface, classification, body, centroid) -> float:
    cx, cy = centroid
    samples = []
    for key, record in surface.items():
        if key[0] == "d":
            continue
        c = classification.crossings[key]
        if c.body != body or c.y <= cy:
            continue
        alpha = math.atan2(c.y - cy, c.x - cx)
        if math.radians(3.0) < alpha < math.radians(177.0):
            samples.append((alpha, record[0]))
    samples.sort()
    for (a0, w0), (a1, w1) in zip(samples, samples[1:]):
        if w0 == 0.0:
            return math.degrees(a0)
        if w0 * w1 < 0.0:
            return math.degrees(a0 + (a1 - a0) * w0 / (w0 - w1))
    return 0.0


def _drag_coefficient(state, grid, config) -> float:
    """Streamwise momentum balance over the whole channel.

    With free-slip top and bottom edges (v = 0) nothing crosses them, so
    the drag is the inlet-minus-outlet flux of p + u^2 plus the viscous
    normal stresses; the plane-to-plane pressure drop is recovered from
    Bernoulli along the top edge, where the flow stays irrotational.
    """
    y = grid.y
    u_in = state.u[:, 0]
    u_out = state.u[:, -1]
    u_x = derivative_field(state.u, grid.h, 1, 1)
    flux = np.trapezoid(u_in**2 - u_out**2, y)
    viscous = 2.0 / config.re * np.trapezoid(u_x[:, -1] - u_x[:, 0], y)
    p_drop = 0.5 * (u_out[-1]**2 - u_in[-1]**2)
    drag = p_drop * config.ht + flux + viscous
    return 2.0 * drag


def _local_extrema(psi, valid):
    """Strict local extrema of psi over all-fluid 3x3 neighborhoods."""
    n, m = psi.shape
    center = psi[1:-1, 1:-1]
    ok = valid[1:-1, 1:-1].copy()
    above = np.ones(center.shape, dtype=bool)
    below = np.ones(center.shape, dtype=bool)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = psi[1 + dj:n - 1 + dj, 1 + di:m - 1 + di]
            ok &= valid[1 + dj:n - 1 + dj, 1 + di:m - 1 + di]
            above &= center > nb
            below &= center < nb
    jj, ii = np.nonzero(ok & (above | below))
    return [(int(i) + 1, int(j) + 1) for i, j in zip(ii, jj)]


def _refine_extremum(psi, grid, i, j):
    """Quadratic fit over the 3x3 neighborhood; returns the stationary
    point when it falls inside the cell, else the node itself."""
    di, dj = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0])
    z = psi[j - 1:j + 2, i - 1:i + 2].ravel()
    A = np.stack([np.ones(9), di.ravel(), dj.ravel(), di.ravel()**2,
                  (di * dj).ravel(), dj.ravel()**2], axis=1)
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    _, b, c, d, e, f = coef
    det = 4.0 * d * f - e * e
    if abs(det) < 1e-300:
        return grid.x[i], grid.y[j], psi[j, i]
    sx = (-2.0 * f * b + e * c) / det
    sy = (-2.0 * d * c + e * b) / det
    if abs(sx) > 1.0 or abs(sy) > 1.0:
        return grid.x[i], grid.y[j], psi[j, i]
    value = coef @ np.array([1.0, sx, sy, sx * sx, sx * sy, sy * sy])
    return grid.x[i] + sx * grid.h, grid.y[j] + sy * grid.l, float(value)


def _vortex_centers(state, grid, classification) -> tuple:
    valid = ~classification.in_body
    centers = []
    for i, j in _local_extrema(state.psi, valid):
        x, y, value = _refine_extremum(state.psi, grid, i, j)
        centers.append(VortexCenter(x=x, y=y, psi=value,
                                    omega=float(state.omega[j, i])))
    centers.sort(key=lambda c: (c.x, c.y))
    return tuple(centers)


def count_recirculation_pairs(state, grid, classification, *,
                              x_range=None, y_min=0.0) -> int:
    """Number of mirror eddy pairs, counted as streamfunction extrema
    strictly above y_min (optionally restricted to x_range)."""
    valid = ~classification.in_body
    count = 0
    for i, j in _local_extrema(state.psi, valid):
        if grid.y[j] <= y_min:
            continue
        if x_range is not None and not x_range[0] <= grid.x[i] <= x_range[1]:
            continue
        count += 1
    return count


def diagnostics(state: FlowState, config: FlowConfig, grid=None,
                classification=None) -> FlowDiagnostics:
    """Flow measures from a converged state; rejects unconverged input."""
    if not state.omega_delta <= config.omega_tol:
        raise FlowError(
            f"diagnostics need a converged state; last vorticity update was "
            f"{state.omega_delta:.3e} against tolerance {config.omega_tol:.3e}")
    if grid is None or classification is None:
        grid, classification = config.build()
    surface = interface_vorticity(grid, classification, state.psi)
    centroids = _body_centroids(classification)
    wake = 0.0
    theta = 0.0
    if centroids:
        body = max(centroids, key=lambda b: centroids[b][0])
        wake = _wake_length(state, grid, classification, body, centroids[body])
        theta = _separation_angle(surface, classification, body, centroids[body])
    omega_max = float(np.abs(state.omega[~classification.in_body]).max())
    segment_values = [v[0] for k, v in surface.items() if k[0] != "d"]
    if segment_values:
        omega_max = max(omega_max, float(np.abs(np.array(segment_values)).max()))
    return FlowDiagnostics(
        wake_length=wake,
        separation_angle_deg=theta,
        drag_coefficient=_drag_coefficient(state, grid, config),
        vortex_centers=_vortex_centers(state, grid, classification),
        omega_max=omega_max,
    )


_MAGIC = b"IMFLOW01"
_HEADER = struct.Struct("<8sIIId")


def save_state(path, state: FlowState) -> None:
    """Checkpoint layout: magic "IMFLOW01", then little-endian u32 m, u32 n,
    u32 outer_iter, f64 omega_delta, then psi, omega, u, v as row-major
    little-endian f64 blocks of n*m entries each."""
    n, m = state.psi.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, m, n, state.outer_iter,
                              state.omega_delta))
        for arr in (state.psi, state.omega, state.u, state.v):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_state(path) -> FlowState:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FlowError(f"checkpoint {path} is truncated")
        magic, m, n, outer_iter, omega_delta = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise FlowError(f"checkpoint {path} has wrong magic {magic!r}")
        fields = []
        for _ in range(4):
            buf = fh.read(8 * m * n)
            if len(buf) < 8 * m * n:
                raise FlowError(f"checkpoint {path} is truncated")
            fields.append(np.frombuffer(buf, dtype="<f8").reshape(n, m).copy())
    psi, omega, u, v = fields
    return FlowState(psi=psi, omega=omega, u=u, v=v, outer_iter=outer_iter,
                     omega_delta=omega_delta)


def interpolate_state(state: FlowState, grid_from: Grid, grid_to: Grid) -> FlowState:
    """Bilinear transfer of a state onto another grid (for warm starts
    across resolutions); body masking is reapplied by the receiving loop."""
    from scipy.interpolate import RegularGridInterpolator

    Xn, Yn = grid_to.meshgrid()
    pts = np.stack([Yn.ravel(), Xn.ravel()], axis=1)
    out = []
    for arr in (state.psi, state.omega, state.u, state.v):
        interp = RegularGridInterpolator((grid_from.y, grid_from.x), arr,
                                         bounds_error=False, fill_value=None)
        out.append(interp(pts).reshape(grid_to.shape))
    psi, omega, u, v = out
    return FlowState(psi=psi, omega=omega, u=u, v=v)


def write_field_csv(target, grid: Grid, state: FlowState) -> None:
    """One "x,y,psi,omega,u,v" record per node, row-major."""
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w") if own else target
    try:
        fh.write("x,y,psi,omega,u,v\n")
        X, Y = grid.meshgrid()
        cols = [X.ravel(), Y.ravel(), state.psi.ravel(), state.omega.ravel(),
                state.u.ravel(), state.v.ravel()]
        for row in zip(*cols):
            fh.write(",".join(f"{v:.12e}" for v in row) + "\n")
    finally:
        if own:
            fh.close()


def write_diagnostics(target, diag: FlowDiagnostics) -> None:
    """Diagnostics as one key=value pair per line."""
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w") if own else target
    try:
        fh.write(f"wake_length={diag.wake_length:.9g}\n")
        fh.write(f"separation_angle_deg={diag.separation_angle_deg:.9g}\n")
        fh.write(f"drag_coefficient={diag.drag_coefficient:.9g}\n")
        fh.write(f"omega_max={diag.omega_max:.9g}\n")
        fh.write(f"vortex_count={len(diag.vortex_centers)}\n")
        for k, c in enumerate(diag.vortex_centers, start=1):
            fh.write(f"vortex{k}_x={c.x:.9g}\n")
            fh.write(f"vortex{k}_y={c.y:.9g}\n")
            fh.write(f"vortex{k}_psi={c.psi:.9g}\n")
            fh.write(f"vortex{k}_omega={c.omega:.9g}\n")
    finally:
        if own:
            fh.close()
