"""Fourth-order compact nine-point discretization of
beta*(u_xx + u_yy) + c*u_x + d*u_y + kappa*u = f on uniform grids.

The scheme folds the leading truncation error back into the operator,
which requires first and second derivatives of every variable coefficient
(and of f).  Letters A..M collect the modified coefficients; the nine
stencil weights and the modified right-hand side F follow algebraically.
All formulas work elementwise on numpy arrays, on scalars, and on sympy
expressions (the tests exploit the latter for exact truncation checks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# every variable coefficient enters with value, gradient and unmixed
# second derivatives; no mixed derivatives are needed
COEFFICIENT_NAMES = tuple(
    base + suffix
    for base in ("beta", "c", "d", "kappa", "f")
    for suffix in ("", "_x", "_y", "_xx", "_yy")
)

STENCIL_OFFSETS = ((-1, -1), (0, -1), (1, -1),
                   (-1, 0), (0, 0), (1, 0),
                   (-1, 1), (0, 1), (1, 1))


def hoc_letters(v: dict, h, l) -> dict:
    """Modified operator coefficients A..M and right-hand side F from the
    25 coefficient values in v (any arithmetic-compatible scalars/arrays).

    The corrections are the unique choice cancelling all second-order
    truncation terms of the nine-point row for the non-conservative
    operator with independent convection coefficients c, d.  When the
    operator comes from div(beta grad u) (so c = beta_x, d = beta_y) the
    auxiliary factors tx, ty reduce to -c/beta and -d/beta.
    """
    b, bx, by, bxx, byy = (v[k] for k in ("beta", "beta_x", "beta_y", "beta_xx", "beta_yy"))
    c, cx, cy, cxx, cyy = (v[k] for k in ("c", "c_x", "c_y", "c_xx", "c_yy"))
    d, dx, dy, dxx, dyy = (v[k] for k in ("d", "d_x", "d_y", "d_xx", "d_yy"))
    k, kx, ky, kxx, kyy = (v[n] for n in ("kappa", "kappa_x", "kappa_y", "kappa_xx", "kappa_yy"))
    f, fx, fy, fxx, fyy = (v[k] for k in ("f", "f_x", "f_y", "f_xx", "f_yy"))
    hh = h * h / 12
    ll = l * l / 12
    tx = (c - 2 * bx) / b
    ty = (d - 2 * by) / b
    return {
        "A": b + hh * (bxx + 2 * cx + k + tx * (c + bx)) + ll * (byy + ty * by),
        "B": b + hh * (bxx + tx * bx) + ll * (byy + 2 * dy + k + ty * (d + by)),
        "C": c + hh * (cxx + 2 * kx + tx * (cx + k)) + ll * (cyy + ty * cy),
        "D": d + hh * (dxx + tx * dx) + ll * (dyy + 2 * ky + ty * (dy + k)),
        "E": b * (h * h + l * l) / 12,
        "H": c * (h * h + l * l) / 12,
        "K": d * (h * h + l * l) / 12,
        "L": hh * (2 * dx + tx * d) + ll * (2 * cy + ty * c),
        "M": k + hh * (kxx + tx * kx) + ll * (kyy + ty * ky),
        "F": f + hh * (fxx + tx * fx) + ll * (fyy + ty * fy),
    }


def stencil_weights(letters: dict, h, l) -> dict:
    """Nine-point weights keyed by (da, db) node offsets."""
    A, B, C, D, E = (letters[k] for k in "ABCDE")
    H, K, L, M = (letters[k] for k in "HKLM")
    h2, l2 = h * h, l * l
    ehl = E / (h2 * l2)
    return {
        (-1, -1): ehl - H / (2 * h * l2) - K / (2 * h2 * l) + L / (4 * h * l),
        (0, -1): B / l2 - D / (2 * l) - 2 * ehl + K / (h2 * l),
        (1, -1): ehl + H / (2 * h * l2) - K / (2 * h2 * l) - L / (4 * h * l),
        (-1, 0): A / h2 - C / (2 * h) - 2 * ehl + H / (h * l2),
        (0, 0): -2 * A / h2 - 2 * B / l2 + 4 * ehl + M,
        (1, 0): A / h2 + C / (2 * h) - 2 * ehl - H / (h * l2),
        (-1, 1): ehl - H / (2 * h * l2) + K / (2 * h2 * l) - L / (4 * h * l),
        (0, 1): B / l2 + D / (2 * l) - 2 * ehl - K / (h2 * l),
        (1, 1): ehl + H / (2 * h * l2) + K / (2 * h2 * l) + L / (4 * h * l),
    }


def _vectorized(fn):
    def call(x, y):
        xa = np.asarray(x, dtype=float)
        ya = np.asarray(y, dtype=float)
        out = np.asarray(fn(xa, ya), dtype=float)
        shape = np.broadcast_shapes(xa.shape, ya.shape)
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out
    return call


class CoefficientField:
    """Sided coefficient data: 25 callbacks per side, one for each entry of
    COEFFICIENT_NAMES, each mapping coordinate arrays to value arrays."""

    def __init__(self, minus: dict, plus: dict):
        for table in (minus, plus):
            missing = [n for n in COEFFICIENT_NAMES if n not in table]
            if missing:
                raise KeyError(f"coefficient callbacks missing: {missing}")
        self.minus = {n: _vectorized(minus[n]) for n in COEFFICIENT_NAMES}
        self.plus = {n: _vectorized(plus[n]) for n in COEFFICIENT_NAMES}

    @classmethod
    def from_sympy(cls, x, y, beta=1, c=0, d=0, kappa=0, f=0) -> "CoefficientField":
        """Build the 50 callbacks by symbolic differentiation.  Each
        coefficient is an expression (shared by both sides) or a
        (minus, plus) pair."""
        import sympy as sp

        def pair(v):
            if isinstance(v, (tuple, list)):
                vm, vp = v
            else:
                vm = vp = v
            return sp.sympify(vm), sp.sympify(vp)

        tables: tuple[dict, dict] = ({}, {})
        for base, value in (("beta", beta), ("c", c), ("d", d), ("kappa", kappa), ("f", f)):
            for expr, table in zip(pair(value), tables):
                table[base] = sp.lambdify((x, y), expr, "numpy")
                table[base + "_x"] = sp.lambdify((x, y), sp.diff(expr, x), "numpy")
                table[base + "_y"] = sp.lambdify((x, y), sp.diff(expr, y), "numpy")
                table[base + "_xx"] = sp.lambdify((x, y), sp.diff(expr, x, 2), "numpy")
                table[base + "_yy"] = sp.lambdify((x, y), sp.diff(expr, y, 2), "numpy")
        return cls(*tables)

    @classmethod
    def constant(cls, beta=1.0, c=0.0, d=0.0, kappa=0.0, f=0.0) -> "CoefficientField":
        table = {n: 0.0 for n in COEFFICIENT_NAMES}
        table.update(beta=beta, c=c, d=d, kappa=kappa, f=f)
        fns = {n: (lambda v: (lambda x, y: np.full(np.broadcast_shapes(
            np.shape(x), np.shape(y)), v)))(val) for n, val in table.items()}
        return cls(fns, dict(fns))

    def evaluate(self, name: str, x: float, y: float, side: int) -> float:
        table = self.minus if side == -1 else self.plus
        return float(table[name](x, y))

    def evaluate_on(self, X, Y, side) -> dict:
        """Evaluate all 25 coefficients on coordinate arrays, selecting the
        branch per node from the side array (-1 minus, +1 plus)."""
        mask = np.asarray(side) == -1
        out = {}
        with np.errstate(all="ignore"):
            for name in COEFFICIENT_NAMES:
                out[name] = np.where(mask, self.minus[name](X, Y), self.plus[name](X, Y))
        return out


class ArrayCoefficientField:
    """Coefficients given as node arrays on a fixed grid (side-independent).

    Any name not supplied defaults to zero, except beta which defaults to
    one.  Used for the flow solver where c, d, f come from field data and
    their derivatives from finite differences.
    """

    def __init__(self, grid, **arrays):
        self.grid = grid
        shape = grid.shape
        self.data = {}
        for name in COEFFICIENT_NAMES:
            if name in arrays:
                arr = np.asarray(arrays[name], dtype=float)
                if arr.shape != shape:
                    raise ValueError(f"array for {name} has shape {arr.shape}, want {shape}")
                self.data[name] = arr
            elif name == "beta":
                self.data[name] = np.ones(shape)
            else:
                self.data[name] = np.zeros(shape)
        unknown = set(arrays) - set(COEFFICIENT_NAMES)
        if unknown:
            raise KeyError(f"unknown coefficient names: {sorted(unknown)}")

    def evaluate(self, name: str, x: float, y: float, side: int) -> float:
        g = self.grid
        i = int(round((x - g.x0) / g.h))
        j = int(round((y - g.y0) / g.l))
        return float(self.data[name][j, i])

    def evaluate_on(self, X, Y, side) -> dict:
        return {name: self.data[name] for name in COEFFICIENT_NAMES}


@dataclass
class StencilRow:
    """One nine-point equation: sum of weights[(da,db)] * u(i+da, j+db) = rhs."""

    i: int
    j: int
    weights: dict
    rhs: float


def hoc_row(field, grid, i: int, j: int, side: int) -> StencilRow:
    """Single-node reference row; the assembly uses the vectorized path."""
    x, y = grid.node(i, j)
    vals = {name: field.evaluate(name, x, y, side) for name in COEFFICIENT_NAMES}
    letters = hoc_letters(vals, grid.h, grid.l)
    return StencilRow(i, j, stencil_weights(letters, grid.h, grid.l), letters["F"])
