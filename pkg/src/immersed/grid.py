"""Uniform Cartesian grids, level-set bodies, and interface bookkeeping.

A body is the zero set of a level-set function phi(x, y); phi <= 0 is the
minus side (inside the body), phi > 0 the plus side.  Interior nodes whose
nine-point stencil straddles an interface are "irregular"; for each grid
segment cut by an interface a Crossing record stores the intersection
point, the signed offsets to the bracketing nodes and the normal angle.
These records feed the jump-corrected stencil assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class GridError(Exception):
    """Raised for invalid grids or geometry the solver cannot handle."""


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid with m nodes in x and n nodes in y.

    Nodes are (x0 + i*h, y0 + j*l) for i in 0..m-1, j in 0..n-1.  Field
    arrays are indexed [j, i]; the flat node index is j*m + i.
    """

    x0: float
    xf: float
    y0: float
    yf: float
    m: int
    n: int
    h: float
    l: float
    x: np.ndarray
    y: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.m)

    @property
    def num_nodes(self) -> int:
        return self.m * self.n

    def index(self, i: int, j: int) -> int:
        return j * self.m + i

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.x[i], self.y[j])

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays of shape (n, m)."""
        return np.meshgrid(self.x, self.y)


def build_grid(x0: float, xf: float, y0: float, yf: float, m: int, n: int) -> Grid:
    """Create a uniform grid with m x n nodes spanning [x0,xf] x [y0,yf]."""
    if not (xf > x0 and yf > y0):
        raise GridError("domain extents must be increasing")
    if m < 5 or n < 5:
        raise GridError("need at least 5 nodes per direction")
    h = (xf - x0) / (m - 1)
    l = (yf - y0) / (n - 1)
    x = x0 + h * np.arange(m)
    y = y0 + l * np.arange(n)
    return Grid(x0, xf, y0, yf, m, n, h, l, x, y)


class LevelSetBody:
    """Closed interface given by a level-set function and its gradient."""

    def __init__(self, phi, grad_phi, label: str = "body"):
        self.phi = phi
        self.grad_phi = grad_phi
        self.label = label

    def normal_angle(self, x: float, y: float) -> float:
        gx, gy = self.grad_phi(x, y)
        return math.atan2(float(gy), float(gx))


def circle(cx: float, cy: float, r: float, label: str = "circle") -> LevelSetBody:
    if r <= 0:
        raise GridError("circle radius must be positive")

    def phi(x, y):
        return (x - cx) ** 2 + (y - cy) ** 2 - r * r

    def grad(x, y):
        return 2.0 * (x - cx), 2.0 * (y - cy)

    return LevelSetBody(phi, grad, label)


def ellipse(cx: float, cy: float, a: float, b: float, tilt: float = 0.0,
            label: str = "ellipse") -> LevelSetBody:
    """Tilted ellipse with semi-axes a (along tilt direction) and b."""
    if a <= 0 or b <= 0:
        raise GridError("ellipse semi-axes must be positive")
    ct, st = math.cos(tilt), math.sin(tilt)

    def phi(x, y):
        dx, dy = x - cx, y - cy
        xi = dx * ct + dy * st
        eta = -dx * st + dy * ct
        return (xi / a) ** 2 + (eta / b) ** 2 - 1.0

    def grad(x, y):
        dx, dy = x - cx, y - cy
        xi = dx * ct + dy * st
        eta = -dx * st + dy * ct
        gxi = 2.0 * xi / a**2
        geta = 2.0 * eta / b**2
        return gxi * ct - geta * st, gxi * st + geta * ct

    return LevelSetBody(phi, grad, label)


def star(r0: float, amplitude: float, petals: int, cx: float = 0.0, cy: float = 0.0,
         label: str = "star") -> LevelSetBody:
    """Petaled interface r(theta) = r0 + amplitude*sin(petals*theta)."""
    if r0 <= abs(amplitude):
        raise GridError("star base radius must exceed the petal amplitude")

    def phi(x, y):
        dx, dy = x - cx, y - cy
        r = np.sqrt(dx * dx + dy * dy)
        th = np.arctan2(dy, dx)
        return r - r0 - amplitude * np.sin(petals * th)

    def grad(x, y):
        dx, dy = x - cx, y - cy
        r2 = dx * dx + dy * dy
        r = np.sqrt(r2)
        th = np.arctan2(dy, dx)
        c = amplitude * petals * np.cos(petals * th)
        # d(theta)/dx = -dy/r^2, d(theta)/dy = dx/r^2
        return dx / r + c * dy / r2, dy / r - c * dx / r2

    return LevelSetBody(phi, grad, label)


@dataclass(frozen=True)
class Crossing:
    """Interface intersection with a single grid segment.

    (i, j) anchors the lower-index end of the segment; the segment runs to
    (i+1, j) for axis "x" and to (i, j+1) for axis "y".  offset_lo/offset_hi
    are the signed node-minus-star distances along the segment axis, so
    offset_lo <= 0 <= offset_hi and offset_hi - offset_lo equals the spacing.
    """

    x: float
    y: float
    axis: str
    i: int
    j: int
    offset_lo: float
    offset_hi: float
    theta: float
    body: int


@dataclass
class PointClass:
    """Classification record for one interior node."""

    i: int
    j: int
    kind: str                      # "regular" | "irregular"
    side: int                      # -1 on/inside a body, +1 outside
    in_body: bool
    body: int = -1                 # body index for irregular/inside nodes
    sides: np.ndarray | None = None   # 3x3 of side values, sides[1+db, 1+da]
    case_id: int = 0
    orientation: str = ""
    irregular_axis: str | None = None  # "x" | "y" | "xy" | "d"
    crossings: list = field(default_factory=list)  # incident segment crossings


_EDGES = {(1, 0): "+x", (-1, 0): "-x", (0, 1): "+y", (0, -1): "-y"}


def classify_case(across: set) -> tuple[int, str]:
    """Map an across-neighbor pattern to the printed case taxonomy.

    Returns (case_id, orientation); case_id 0 means the pattern falls
    outside the eight drawn configurations (still handled generically).
    """
    cut_e, cut_w = (1, 0) in across, (-1, 0) in across
    cut_n, cut_s = (0, 1) in across, (0, -1) in across
    if not across:
        return 0, ""
    if (cut_e or cut_w) and not (cut_n or cut_s):
        sx = 1 if cut_e else -1
        canon = {(a * sx, b) for a, b in across}
        pattern = {1: {(1, 1), (1, 0), (1, -1)}, 2: {(1, 1), (1, 0)}, 3: {(1, 0), (1, -1)}}
        for cid, pat in pattern.items():
            if canon == pat:
                return cid, "+x" if sx == 1 else "-x"
        return 0, "+x" if sx == 1 else "-x"
    if (cut_n or cut_s) and not (cut_e or cut_w):
        sy = 1 if cut_n else -1
        canon = {(a, b * sy) for a, b in across}
        pattern = {4: {(-1, 1), (0, 1), (1, 1)}, 5: {(-1, 1), (0, 1)}, 6: {(0, 1), (1, 1)}}
        for cid, pat in pattern.items():
            if canon == pat:
                return cid, "+y" if sy == 1 else "-y"
        return 0, "+y" if sy == 1 else "-y"
    if (cut_e or cut_w) and (cut_n or cut_s):
        sx = 1 if cut_e else -1
        sy = 1 if cut_n else -1
        canon = {(a * sx, b * sy) for a, b in across}
        orient = ("+x" if sx == 1 else "-x") + ("+y" if sy == 1 else "-y")
        if canon == {(1, 0), (0, 1), (1, 1), (1, -1)}:
            return 7, orient
        if canon == {(1, 0), (0, 1), (1, 1)}:
            return 8, orient
        return 0, orient
    return 0, "d"


def _segment_root(phi, p, q) -> float:
    """Parameter t in [0,1] with phi(p + t*(q-p)) = 0, via safeguarded
    bisection with secant acceleration.  Assumes phi(p)*phi(q) <= 0."""
    fa = float(phi(p[0], p[1]))
    fb = float(phi(q[0], q[1]))
    if fa == 0.0:
        return 0.0
    if fb == 0.0:
        return 1.0
    if fa * fb > 0.0:
        raise GridError("segment endpoints do not bracket the interface")
    a, b = 0.0, 1.0

    def f(t):
        return float(phi(p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))

    for _ in range(200):
        if b - a <= 1e-16:
            break
        # secant candidate, fall back to bisection when it leaves the bracket
        t = a - fa * (b - a) / (fb - fa)
        if not (a < t < b):
            t = 0.5 * (a + b)
        ft = f(t)
        if ft == 0.0:
            return t
        if fa * ft < 0.0:
            b, fb = t, ft
        else:
            a, fa = t, ft
        # one plain bisection per round keeps worst-case convergence
        tm = 0.5 * (a + b)
        fm = f(tm)
        if fm == 0.0:
            return tm
        if fa * fm < 0.0:
            b, fb = tm, fm
        else:
            a, fa = tm, fm
    return a if abs(fa) <= abs(fb) else b


def find_crossing(grid: Grid, body: LevelSetBody, axis: str, i: int, j: int,
                  body_index: int = 0) -> Crossing:
    """Locate the interface on the segment from node (i,j) to its +axis
    neighbor.  The bracketing nodes must have opposite phi signs (or one
    exact zero)."""
    p = grid.node(i, j)
    q = grid.node(i + 1, j) if axis == "x" else grid.node(i, j + 1)
    t = _segment_root(body.phi, p, q)
    xs = p[0] + t * (q[0] - p[0])
    ys = p[1] + t * (q[1] - p[1])
    spacing = grid.h if axis == "x" else grid.l
    tol = 1e-12 * max(grid.h, grid.l)
    if abs(float(body.phi(xs, ys))) > tol * max(1.0, _grad_norm(body, xs, ys)):
        raise GridError(f"crossing search failed to converge on segment ({i},{j},{axis})")
    if axis == "x":
        off_lo, off_hi = p[0] - xs, q[0] - xs
    else:
        off_lo, off_hi = p[1] - ys, q[1] - ys
    theta = body.normal_angle(xs, ys)
    slack = 1e-9 * spacing
    assert -spacing - slack <= off_lo <= 0.0 <= off_hi <= spacing + slack
    return Crossing(xs, ys, axis, i, j, off_lo, off_hi, theta, body_index)


def _grad_norm(body, x, y) -> float:
    gx, gy = body.grad_phi(x, y)
    return math.hypot(float(gx), float(gy))


class Classification:
    """Result of classifying a grid against a list of bodies."""

    def __init__(self, grid, bodies, side, body_id, irregular, crossings, points):
        self.grid = grid
        self.bodies = bodies
        self.side = side            # (n, m) int8
        self.body_id = body_id      # (n, m) int16, -1 outside all bodies
        self.irregular = irregular  # (n, m) bool
        self.crossings = crossings  # {(axis, i, j): Crossing}
        self._points = points       # {(i, j): PointClass} for irregular nodes

    @property
    def in_body(self) -> np.ndarray:
        return self.body_id >= 0

    def point_class(self, i: int, j: int) -> PointClass:
        pc = self._points.get((i, j))
        if pc is not None:
            return pc
        side = int(self.side[j, i])
        return PointClass(i, j, "regular", side, bool(self.body_id[j, i] >= 0))

    def irregular_points(self):
        """Iterate PointClass records of irregular interior nodes."""
        return iter(self._points.values())

    def segment_crossing(self, axis: str, i: int, j: int) -> Crossing | None:
        return self.crossings.get((axis, i, j))


def classify(grid: Grid, bodies: list) -> Classification:
    """Label every node, locate all cut segments and build PointClass
    records for the irregular interior nodes."""
    n, m = grid.shape
    X, Y = grid.meshgrid()
    side = np.ones((n, m), dtype=np.int8)
    body_id = np.full((n, m), -1, dtype=np.int16)
    irregular = np.zeros((n, m), dtype=bool)
    node_body = np.full((n, m), -1, dtype=np.int16)
    crossings: dict = {}

    minus_masks = []
    for k, body in enumerate(bodies):
        phi = np.asarray(body.phi(X, Y), dtype=float)
        minus = phi <= 0.0
        zero = phi == 0.0
        minus_masks.append(minus)

        if np.any(minus & (body_id >= 0)):
            raise GridError("bodies overlap on the grid")
        body_id[minus] = k
        side[minus] = -1

        if np.any(minus[:2, :]) or np.any(minus[-2:, :]) or \
           np.any(minus[:, :2]) or np.any(minus[:, -2:]):
            raise GridError(f"body '{body.label}' touches the boundary ring")

        if np.any(zero[:, :-1] & zero[:, 1:]) or np.any(zero[:-1, :] & zero[1:, :]):
            raise GridError(
                f"interface of '{body.label}' passes through adjacent grid nodes; "
                "shift the grid or body")

        # a node pair "touches" the interface when the sides differ or one
        # endpoint sits exactly on it
        touch = np.zeros((n, m), dtype=bool)
        for da in (-1, 0, 1):
            for db in (-1, 0, 1):
                if da == 0 and db == 0:
                    continue
                src = _shift_view(minus, da, db)
                zsh = _shift_view(zero, da, db)
                core = _core_view(minus, da, db)
                zco = _core_view(zero, da, db)
                hit = (core != src) | zco | zsh
                _core_view(touch, da, db)[...] |= hit
        touch[0, :] = touch[-1, :] = False
        touch[:, 0] = touch[:, -1] = False
        new_irr = touch & ~irregular
        conflict = touch & irregular & (node_body != k)
        if np.any(conflict):
            raise GridError("a stencil straddles two different bodies")
        node_body[new_irr] = k
        irregular |= touch

        # record every cut segment (strict sign change or single-node touch)
        minus_x, zx = minus[:, :-1], zero[:, :-1]
        minus_x2, zx2 = minus[:, 1:], zero[:, 1:]
        cut_x = (minus_x != minus_x2) | (zx ^ zx2)
        for j, i in zip(*np.nonzero(cut_x)):
            crossings[("x", int(i), int(j))] = find_crossing(grid, body, "x", int(i), int(j), k)
        cut_y = (minus[:-1, :] != minus[1:, :]) | (zero[:-1, :] ^ zero[1:, :])
        for j, i in zip(*np.nonzero(cut_y)):
            crossings[("y", int(i), int(j))] = find_crossing(grid, body, "y", int(i), int(j), k)

    _check_separation(minus_masks, bodies)

    points: dict = {}
    for j, i in zip(*np.nonzero(irregular)):
        i, j = int(i), int(j)
        sides = side[j - 1:j + 2, i - 1:i + 2].copy()
        center = int(sides[1, 1])
        across = {(da, db) for da in (-1, 0, 1) for db in (-1, 0, 1)
                  if (da, db) != (0, 0) and int(sides[1 + db, 1 + da]) != center}
        case_id, orientation = classify_case(across)
        incident = [c for c in (
            crossings.get(("x", i - 1, j)), crossings.get(("x", i, j)),
            crossings.get(("y", i, j - 1)), crossings.get(("y", i, j)),
        ) if c is not None]
        cut_x = (1, 0) in across or (-1, 0) in across
        cut_y = (0, 1) in across or (0, -1) in across
        if cut_x and cut_y:
            axis = "xy"
        elif cut_x:
            axis = "x"
        elif cut_y:
            axis = "y"
        elif across:
            axis = "d"
        else:
            axis = None
        points[(i, j)] = PointClass(
            i, j, "irregular", center, bool(body_id[j, i] >= 0),
            int(node_body[j, i]), sides, case_id, orientation, axis, incident)

    return Classification(grid, bodies, side, body_id, irregular, crossings, points)


def _shift_view(arr, da, db):
    """View of arr shifted so element [j,i] aligns with arr[j+db, i+da]."""
    n, m = arr.shape
    return arr[max(db, 0):n + min(db, 0), max(da, 0):m + min(da, 0)]


def _core_view(arr, da, db):
    """Companion view of the unshifted array for _shift_view alignment."""
    n, m = arr.shape
    return arr[max(-db, 0):n + min(-db, 0), max(-da, 0):m + min(-da, 0)]


def _check_separation(minus_masks, bodies, cells: int = 3):
    """Bodies must keep at least `cells` grid cells between their masks."""
    if len(minus_masks) < 2:
        return
    struct = np.ones((3, 3), dtype=bool)
    for a in range(len(minus_masks)):
        grown = ndimage.binary_dilation(minus_masks[a], structure=struct,
                                        iterations=cells - 1)
        for b in range(a + 1, len(minus_masks)):
            if np.any(grown & minus_masks[b]):
                raise GridError(
                    f"bodies '{bodies[a].label}' and '{bodies[b].label}' are closer "
                    f"than {cells} grid cells")
