"""Interface jump data and jump-corrected right-hand-side terms.

When a stencil at an irregular node reaches across the interface, the
across-neighbor value belongs to the other solution branch.  The row is
kept fourth-order by adding, for every across neighbor, the Taylor
expansion of the branch mismatch about a crossing point, built from the
jumps [u], [u_x], ..., [u_yyy] (jump = plus-side minus minus-side).

Jumps prescribed in the interface frame (normal, tangent) are rotated to
Cartesian with the order-1..3 rotation matrices before use.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

from .grid import Classification, Crossing, PointClass, _segment_root


class JumpError(Exception):
    """Raised when a required crossing or jump record is unavailable."""


# (p, q) derivative multi-indices in field order, all orders <= 3
CARTESIAN_ORDER = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
                   (3, 0), (2, 1), (1, 2), (0, 3)]
# optional fourth-order tail; sources that cannot supply these leave zeros,
# which makes a k=4 correction coincide with the k=3 one
QUARTIC_ORDER = [(4, 0), (3, 1), (2, 2), (1, 3), (0, 4)]

_FACT = [1.0, 1.0, 2.0, 6.0, 24.0]


@dataclass
class JumpData:
    """Jumps of u and its Cartesian derivatives up to fourth order."""

    u: float = 0.0
    ux: float = 0.0
    uy: float = 0.0
    uxx: float = 0.0
    uxy: float = 0.0
    uyy: float = 0.0
    uxxx: float = 0.0
    uxxy: float = 0.0
    uxyy: float = 0.0
    uyyy: float = 0.0
    uxxxx: float = 0.0
    uxxxy: float = 0.0
    uxxyy: float = 0.0
    uxyyy: float = 0.0
    uyyyy: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self))

    def x_line(self) -> tuple[float, float, float, float, float]:
        return (self.u, self.ux, self.uxx, self.uxxx, self.uxxxx)

    def y_line(self) -> tuple[float, float, float, float, float]:
        return (self.u, self.uy, self.uyy, self.uyyy, self.uyyyy)


@dataclass
class LocalJumps:
    """Jumps in the interface frame: n along the normal, t tangential."""

    u: float = 0.0
    un: float = 0.0
    ut: float = 0.0
    unn: float = 0.0
    unt: float = 0.0
    utt: float = 0.0
    unnn: float = 0.0
    unnt: float = 0.0
    untt: float = 0.0
    uttt: float = 0.0


def rotation_matrices(theta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Matrices mapping local-frame derivative vectors of orders 1..3 to
    Cartesian ones, for a local frame rotated by theta."""
    c, s = math.cos(theta), math.sin(theta)
    r1 = np.array([[c, -s],
                   [s, c]])
    r2 = np.array([[c * c, -2 * c * s, s * s],
                   [c * s, c * c - s * s, -c * s],
                   [s * s, 2 * c * s, c * c]])
    r3 = np.array([[c**3, -3 * c**2 * s, 3 * c * s**2, -s**3],
                   [c**2 * s, c**3 - 2 * c * s**2, s**3 - 2 * c**2 * s, c * s**2],
                   [c * s**2, 2 * c**2 * s - s**3, c**3 - 2 * c * s**2, -c**2 * s],
                   [s**3, 3 * c * s**2, 3 * c**2 * s, c**3]])
    return r1, r2, r3


def rotate_to_cartesian(local: LocalJumps, theta: float) -> JumpData:
    r1, r2, r3 = rotation_matrices(theta)
    g1 = r1 @ (local.un, local.ut)
    g2 = r2 @ (local.unn, local.unt, local.utt)
    g3 = r3 @ (local.unnn, local.unnt, local.untt, local.uttt)
    return JumpData(local.u, g1[0], g1[1], g2[0], g2[1], g2[2],
                    g3[0], g3[1], g3[2], g3[3])


def cartesian_to_local(jumps: JumpData, theta: float) -> LocalJumps:
    """Inverse of rotate_to_cartesian (rotation by -theta)."""
    r1, r2, r3 = rotation_matrices(-theta)
    g1 = r1 @ (jumps.ux, jumps.uy)
    g2 = r2 @ (jumps.uxx, jumps.uxy, jumps.uyy)
    g3 = r3 @ (jumps.uxxx, jumps.uxxy, jumps.uxyy, jumps.uyyy)
    return LocalJumps(jumps.u, g1[0], g1[1], g2[0], g2[1], g2[2],
                      g3[0], g3[1], g3[2], g3[3])


def correction(offset: float, jumps: JumpData, direction: str, k: int = 3) -> float:
    """Unsigned branch-mismatch Taylor sum along one axis:
    sum_{n<=k} offset^n / n! * [d^n u / d direction^n]."""
    line = jumps.x_line() if direction == "x" else jumps.y_line()
    total = 0.0
    p = 1.0
    for order in range(min(k, 4) + 1):
        total += p / _FACT[order] * line[order]
        p *= offset
    return total


def correction2d(dx: float, dy: float, jumps: JumpData, k: int = 3) -> float:
    """Unsigned two-variable Taylor sum over all jumps with p + q <= k."""
    arr = jumps.as_array()
    total = 0.0
    for (p, q), val in zip(CARTESIAN_ORDER + QUARTIC_ORDER, arr):
        if p + q > k:
            continue
        total += dx**p * dy**q / (_FACT[p] * _FACT[q]) * val
    return total


class ZeroJumpSource:
    """All jumps vanish (smooth solution across the interface)."""

    def jumps_for(self, crossing: Crossing) -> JumpData:
        return JumpData()


class CartesianJumpSource:
    """Jumps from a callback returning JumpData at a crossing."""

    def __init__(self, fn):
        self.fn = fn

    def jumps_for(self, crossing: Crossing) -> JumpData:
        return self.fn(crossing)


class LocalJumpSource:
    """Jumps prescribed in the interface frame; rotated per crossing."""

    def __init__(self, fn):
        self.fn = fn

    def jumps_for(self, crossing: Crossing) -> JumpData:
        return rotate_to_cartesian(self.fn(crossing), crossing.theta)


class TwoSidedJumpSource:
    """Jumps evaluated as plus-branch minus minus-branch derivatives.

    plus/minus map (p, q) multi-indices to callables f(x, y) for every
    derivative order p + q <= 3; fourth-order entries are optional and
    enable k=4 corrections when present on both sides.
    """

    def __init__(self, plus: dict, minus: dict):
        missing = [pq for pq in CARTESIAN_ORDER if pq not in plus or pq not in minus]
        if missing:
            raise JumpError(f"derivative callbacks missing for orders {missing}")
        self.plus = plus
        self.minus = minus
        self.order = 4 if all(pq in plus and pq in minus
                              for pq in QUARTIC_ORDER) else 3

    @classmethod
    def from_sympy(cls, u_plus, u_minus, x, y) -> "TwoSidedJumpSource":
        import sympy as sp

        def table(expr):
            return {(p, q): sp.lambdify((x, y), sp.diff(expr, x, p, y, q), "math")
                    for p, q in CARTESIAN_ORDER + QUARTIC_ORDER}

        return cls(table(sp.sympify(u_plus)), table(sp.sympify(u_minus)))

    def jumps_for(self, crossing: Crossing) -> JumpData:
        xs, ys = crossing.x, crossing.y
        order = CARTESIAN_ORDER + (QUARTIC_ORDER if self.order == 4 else [])
        vals = [float(self.plus[pq](xs, ys)) - float(self.minus[pq](xs, ys))
                for pq in order]
        return JumpData(*vals)


def diagonal_crossing(cls: Classification, pc: PointClass, da: int, db: int) -> Crossing:
    """Interface intersection with the diagonal segment from the stencil
    center to its (da, db) corner neighbor."""
    grid = cls.grid
    body = cls.bodies[pc.body]
    p = grid.node(pc.i, pc.j)
    q = grid.node(pc.i + da, pc.j + db)
    t = _segment_root(body.phi, p, q)
    xs = p[0] + t * (q[0] - p[0])
    ys = p[1] + t * (q[1] - p[1])
    span = math.hypot(q[0] - p[0], q[1] - p[1])
    theta = body.normal_angle(xs, ys)
    return Crossing(xs, ys, "d", pc.i, pc.j, -t * span, (1.0 - t) * span,
                    theta, pc.body)


def route_corrections(pc: PointClass, cls: Classification, source,
                      k: int = 3, corner: str = "taylor") -> dict:
    """Signed per-route branch corrections for every across neighbor.

    Keys are (route, da, db) with route "x" (expansion along the neighbor's
    row), "y" (along its column) or "d" (two-variable expansion about the
    diagonal crossing).  An orphan diagonal -- one whose row and column
    anchors both sit across the interface -- reuses the single-axis sums
    with the crossing taken one segment further over, so the offset merely
    grows toward 2h while the truncated sum keeps its form (corner =
    "extend"); corner = "taylor" expands the jump field in both variables
    about the diagonal crossing instead.  The sign makes each value equal
    u(neighbor) minus the center-branch extension there, so rows read
    sum c_n u_n = F + sum_across c_n * value_n.
    """
    grid = cls.grid
    i, j = pc.i, pc.j
    center = pc.side
    sgn = 1.0 if center == -1 else -1.0
    routes: dict = {}

    def jumps_for(crossing):
        data = source.jumps_for(crossing)
        if data is None:
            raise JumpError(
                f"jump source returned no data at ({crossing.x:.6g}, {crossing.y:.6g})")
        return data

    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            if (da, db) == (0, 0) or pc.sides[1 + db, 1 + da] == center:
                continue
            found = False
            if da != 0 and pc.sides[1 + db, 1] == center:
                key = ("x", i if da > 0 else i - 1, j + db)
                c = cls.crossings.get(key)
                if c is None:
                    raise JumpError(f"no crossing record for segment {key}")
                off = grid.x[i + da] - c.x
                routes[("x", da, db)] = sgn * correction(off, jumps_for(c), "x", k)
                found = True
            if db != 0 and pc.sides[1, 1 + da] == center:
                key = ("y", i + da, j if db > 0 else j - 1)
                c = cls.crossings.get(key)
                if c is None:
                    raise JumpError(f"no crossing record for segment {key}")
                off = grid.y[j + db] - c.y
                routes[("y", da, db)] = sgn * correction(off, jumps_for(c), "y", k)
                found = True
            if not found and corner == "extend":
                if da != 0 and pc.sides[1 + db, 1 - da] == center:
                    key = ("x", i - 1 if da > 0 else i, j + db)
                    c = cls.crossings.get(key)
                    if c is not None:
                        off = grid.x[i + da] - c.x
                        routes[("x", da, db)] = sgn * correction(off, jumps_for(c), "x", k)
                        found = True
                if db != 0 and pc.sides[1 - db, 1 + da] == center:
                    key = ("y", i + da, j - 1 if db > 0 else j)
                    c = cls.crossings.get(key)
                    if c is not None:
                        off = grid.y[j + db] - c.y
                        routes[("y", da, db)] = sgn * correction(off, jumps_for(c), "y", k)
                        found = True
            if not found and corner in ("taylor", "extend"):
                c = diagonal_crossing(cls, pc, da, db)
                dx = grid.x[i + da] - c.x
                dy = grid.y[j + db] - c.y
                routes[("d", da, db)] = sgn * correction2d(dx, dy, jumps_for(c), k)
    return routes


def rhs_corrections(pc: PointClass, weights: dict, routes: dict) -> float:
    """Total right-hand-side increment sum_across c_(da,db) * value_(da,db).

    The two single-axis routes are averaged when both exist.  An orphan
    corner with a diagonal route uses it; otherwise it falls back to the
    mean of the two adjacent direct-neighbor corrections.
    """
    center = pc.side
    total = 0.0
    for (da, db), w in weights.items():
        if (da, db) == (0, 0) or pc.sides[1 + db, 1 + da] == center:
            continue
        vals = [routes[key] for key in (("x", da, db), ("y", da, db)) if key in routes]
        if vals:
            value = sum(vals) / len(vals)
        elif ("d", da, db) in routes:
            value = routes[("d", da, db)]
        else:
            kx, ky = ("x", da, 0), ("y", 0, db)
            if kx in routes and ky in routes:
                value = 0.5 * (routes[kx] + routes[ky])
            else:
                raise JumpError(
                    f"no route for across neighbor ({da},{db}) at node ({pc.i},{pc.j})")
        total += w * value
    return total
