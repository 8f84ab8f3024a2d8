"""Benchmark elliptic interface problems with closed-form solutions.

Each problem lives on the square [-1, 1]^2 and carries a level-set
interface, side-aware operator coefficients, a piecewise exact solution,
and the analytic jump source the assembly consumes.  The module also
provides the solve/error/convergence bookkeeping used to produce grid
refinement tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp

from .assembly import BoundarySpec, SparseSystem, assemble
from .grid import Classification, Grid, LevelSetBody, build_grid, circle, classify, star
from .hoc import CoefficientField
from .jump import CARTESIAN_ORDER, TwoSidedJumpSource
from .linalg import SolveReport, bicgstab, ilu0

X, Y = sp.symbols("x y", real=True)


class ProblemError(Exception):
    """Invalid problem parameters."""


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


def _pair(value):
    if isinstance(value, (tuple, list)):
        vm, vp = value
    else:
        vm = vp = value
    return sp.sympify(vm), sp.sympify(vp)


class ExactSolution:
    """Piecewise closed-form field with branch derivatives to third order.

    Evaluation selects the branch by the sign of the level set (phi <= 0
    is the minus side); problems without an interface evaluate the plus
    branch everywhere.
    """

    def __init__(self, minus, plus, phi: Optional[Callable] = None):
        self.minus_expr = sp.sympify(minus)
        self.plus_expr = sp.sympify(plus)
        self._phi = phi
        self._minus = _vectorized(sp.lambdify((X, Y), self.minus_expr, "numpy"))
        self._plus = _vectorized(sp.lambdify((X, Y), self.plus_expr, "numpy"))
        self._deriv = {}
        for expr, side in ((self.minus_expr, -1), (self.plus_expr, 1)):
            for p, q in CARTESIAN_ORDER:
                fn = sp.lambdify((X, Y), sp.diff(expr, X, p, Y, q), "math")
                self._deriv[(p, q, side)] = fn

    def __call__(self, x, y):
        if self._phi is None:
            return self._plus(x, y)
        side = np.where(np.asarray(self._phi(x, y)) <= 0.0, -1, 1)
        return self.on_sides(x, y, side)

    def on_sides(self, x, y, side):
        """Evaluate with an explicit side array (-1 minus, +1 plus)."""
        mask = np.asarray(side) == -1
        with np.errstate(all="ignore"):
            return np.where(mask, self._minus(x, y), self._plus(x, y))

    def derivative(self, p: int, q: int, x: float, y: float, side: int) -> float:
        """d^(p+q) u / dx^p dy^q of one branch at a point, p + q <= 3."""
        return float(self._deriv[(p, q, side)](x, y))


@dataclass
class AnalyticProblem:
    """An interface problem with everything needed to assemble and grade it."""

    name: str
    corners: tuple[float, float, float, float]
    bodies: list[LevelSetBody]
    fields: CoefficientField
    exact: ExactSolution
    jump_source: TwoSidedJumpSource
    parameters: dict = field(default_factory=dict)
    material_beta: tuple[Callable, Callable] = None
    u_jump_zero: bool = False
    flux_jump_zero: bool = False
    interface_point: Optional[Callable] = None
    _residuals: tuple[Callable, Callable] = None

    def boundary_value(self, x, y):
        """Dirichlet data: the exact solution on the outer rectangle."""
        return self.exact.on_sides(x, y, np.where(self._on_minus(x, y), -1, 1))

    def _on_minus(self, x, y):
        if not self.bodies:
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)), dtype=bool)
        out = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)), dtype=bool)
        for body in self.bodies:
            out |= np.asarray(body.phi(x, y)) <= 0.0
        return out

    def grid_for(self, n: int) -> Grid:
        x0, xf, y0, yf = self.corners
        return build_grid(x0, xf, y0, yf, n, n)

    def pde_residual(self, count: int = 100, seed: int = 0) -> float:
        """Max |operator(exact) - f| over random points on each side.

        Points are rejection-sampled to sit clearly on one side of the
        interface (and at least 0.05 from the domain centre, keeping away
        from radial singularities that always lie inside the minus phase).
        """
        rng = np.random.default_rng(seed)
        x0, xf, y0, yf = self.corners
        worst = 0.0
        for side, fn in ((-1, self._residuals[0]), (1, self._residuals[1])):
            picked = 0
            while picked < count:
                x = rng.uniform(x0, xf)
                y = rng.uniform(y0, yf)
                if math.hypot(x, y) < 0.05:
                    continue
                if self.bodies:
                    phi = float(self.bodies[0].phi(x, y))
                    if side * phi <= 1e-3:
                        continue
                elif side == -1:
                    break
                worst = max(worst, abs(float(fn(x, y))))
                picked += 1
        return worst

    def jump_check(self, count: int = 50, seed: int = 0) -> dict:
        """Max interfacial mismatch of the declared-zero jump conditions.

        Returns {"u": max |[u]|, "flux": max |[beta u_n]|} over sampled
        interface points, computed from the exact branches and the
        material coefficients.
        """
        if self.interface_point is None:
            return {"u": 0.0, "flux": 0.0}
        rng = np.random.default_rng(seed)
        body = self.bodies[0]
        bm, bp = self.material_beta
        worst_u = worst_flux = 0.0
        for t in rng.uniform(0.0, 2.0 * math.pi, size=count):
            x, y = self.interface_point(t)
            gx, gy = body.grad_phi(x, y)
            norm = math.hypot(gx, gy)
            nx, ny = gx / norm, gy / norm
            du = (self.exact.derivative(0, 0, x, y, 1)
                  - self.exact.derivative(0, 0, x, y, -1))
            fp = float(bp(x, y)) * (self.exact.derivative(1, 0, x, y, 1) * nx
                                    + self.exact.derivative(0, 1, x, y, 1) * ny)
            fm = float(bm(x, y)) * (self.exact.derivative(1, 0, x, y, -1) * nx
                                    + self.exact.derivative(0, 1, x, y, -1) * ny)
            worst_u = max(worst_u, abs(du))
            worst_flux = max(worst_flux, abs(fp - fm))
        return {"u": worst_u, "flux": worst_flux}


def _build(name: str, *, u, beta=1, c=0, d=0, kappa=0, f=None, bodies,
           parameters=None, material_beta=None, u_jump_zero=False,
           flux_jump_zero=False, interface_point=None,
           corners=(-1.0, 1.0, -1.0, 1.0)) -> AnalyticProblem:
    """Assemble an AnalyticProblem from sympy branch expressions.

    Every coefficient is a single expression (both sides) or a
    (minus, plus) pair.  When f is omitted it is derived by applying the
    operator to the exact branches, which keeps the problem consistent by
    construction.
    """
    um, up = _pair(u)
    bm, bp = _pair(beta)
    cm, cp = _pair(c)
    dm, dp = _pair(d)
    km, kp = _pair(kappa)

    def apply_operator(us, bs, cs, ds, ks):
        return (bs * (sp.diff(us, X, 2) + sp.diff(us, Y, 2))
                + cs * sp.diff(us, X) + ds * sp.diff(us, Y) + ks * us)

    if f is None:
        f = (apply_operator(um, bm, cm, dm, km), apply_operator(up, bp, cp, dp, kp))
    fm, fp = _pair(f)

    residuals = tuple(
        sp.lambdify((X, Y), apply_operator(us, bs, cs, ds, ks) - fs, "math")
        for us, bs, cs, ds, ks, fs in
        ((um, bm, cm, dm, km, fm), (up, bp, cp, dp, kp, fp)))

    if material_beta is None:
        material = (bm, bp)
    else:
        material = _pair(material_beta)
    material_fns = tuple(sp.lambdify((X, Y), expr, "math") for expr in material)

    phi = bodies[0].phi if bodies else None
    return AnalyticProblem(
        name=name,
        corners=corners,
        bodies=list(bodies),
        fields=CoefficientField.from_sympy(
            X, Y, beta=(bm, bp), c=(cm, cp), d=(dm, dp), kappa=(km, kp), f=(fm, fp)),
        exact=ExactSolution(um, up, phi),
        jump_source=TwoSidedJumpSource.from_sympy(up, um, X, Y),
        parameters=dict(parameters or {}),
        material_beta=material_fns,
        u_jump_zero=u_jump_zero,
        flux_jump_zero=flux_jump_zero,
        interface_point=interface_point,
        _residuals=residuals,
    )


def _circle_point(radius: float, cx: float = 0.0, cy: float = 0.0):
    def point(t):
        return cx + radius * math.cos(t), cy + radius * math.sin(t)
    return point


def test_case_1() -> AnalyticProblem:
    """Poisson problem: unit disk solution 1 inside r=1/2, logarithmic outside.

    The solution is continuous across the circle but its normal derivative
    jumps; both sides are harmonic, so f = 0 everywhere.
    """
    r2 = X**2 + Y**2
    return _build(
        "tc1",
        u=(sp.Integer(1), 1 - sp.log(2 * sp.sqrt(r2))),
        f=(0, 0),
        bodies=[circle(0.0, 0.0, 0.5)],
        u_jump_zero=True,
        interface_point=_circle_point(0.5),
    )


def test_case_2(b: float, S: float = 0.1) -> AnalyticProblem:
    """Conservative diffusion with variable beta inside and constant b outside.

    div(beta grad u) = 8 r^2 + 4 plus a line source of strength S on the
    circle r = 1/2; written in non-conservative form the inner side gains
    convection coefficients c = beta_x, d = beta_y.
    """
    if b == 0:
        raise ProblemError("test case 2 requires a nonzero outer coefficient b")
    r2 = X**2 + Y**2
    u_minus = r2
    u_plus = (sp.Rational(1, 4) * (1 - 1 / (8 * sp.Float(b)) - 1 / sp.Float(b))
              + (r2**2 / 2 + r2) / b
              + S * sp.log(2 * sp.sqrt(r2)) / b)
    return _build(
        "tc2",
        u=(u_minus, u_plus),
        beta=(r2 + 1, sp.Float(b)),
        c=(2 * X, 0),
        d=(2 * Y, 0),
        f=8 * r2 + 4,
        bodies=[circle(0.0, 0.0, 0.5)],
        parameters={"b": b, "S": S},
        u_jump_zero=True,
        interface_point=_circle_point(0.5),
    )


def test_case_3(beta_plus: float, beta_minus: float = 1.0, S0: float = -0.1,
                S1: float = 0.0, r0: float = 0.5, w: int = 5) -> AnalyticProblem:
    """Star-interface problem with a material contrast folded into the solution.

    The interface is the petaled curve r = r0 + 0.2 sin(w theta) about
    (0.2/sqrt(20), 0.2/sqrt(20)); the exact branches scale with the
    material coefficients beta-+, while the assembled operator is the
    plain Laplacian, so f = 4/beta- inside and 16 r^2 (1 - S1)/beta+
    outside (the printed right-hand side of the S1 = 0 tables).
    """
    if beta_plus == 0 or beta_minus == 0:
        raise ProblemError("test case 3 requires nonzero material coefficients")
    center = 0.2 / math.sqrt(20.0)
    r2 = X**2 + Y**2
    u_minus = r2 / beta_minus
    u_plus = ((r2**2 + S0 * sp.log(2 * sp.sqrt(r2))) / beta_plus
              + S1 * (r0**2 / sp.Float(beta_minus)
                      - (r2**2 + S0 * math.log(2 * r0)) / beta_plus))
    body = star(r0, 0.2, w, cx=center, cy=center)

    def on_interface(t):
        rad = r0 + 0.2 * math.sin(w * t)
        return center + rad * math.cos(t), center + rad * math.sin(t)

    return _build(
        "tc3",
        u=(u_minus, u_plus),
        beta=1,
        f=(4 / sp.Float(beta_minus), 16 * r2 * (1 - S1) / beta_plus),
        bodies=[body],
        parameters={"beta_plus": beta_plus, "beta_minus": beta_minus,
                    "S0": S0, "S1": S1, "r0": r0, "w": w},
        material_beta=(sp.Float(beta_minus), sp.Float(beta_plus)),
        interface_point=on_interface,
    )


def test_case_4(rho: float) -> AnalyticProblem:
    """Composite-material Laplace problem with contrast ratio rho.

    Both branches are harmonic; the solution and its flux are continuous
    across the circle r = 1/2 when the material coefficients are in the
    ratio rho, so all interface data comes from the branch difference.
    """
    if rho <= 0:
        raise ProblemError("test case 4 requires a positive contrast ratio")
    s = 0.5
    denom = rho + 1 + s**2 * (rho - 1)
    u_minus = 2 * X / denom
    u_plus = (X * (rho + 1) - s**2 * (rho - 1) * X / (X**2 + Y**2)) / denom
    return _build(
        "tc4",
        u=(u_minus, u_plus),
        f=(0, 0),
        bodies=[circle(0.0, 0.0, s)],
        parameters={"rho": rho, "s": s},
        material_beta=(sp.Float(rho), sp.Integer(1)),
        u_jump_zero=True,
        flux_jump_zero=True,
        interface_point=_circle_point(s),
    )


def manufactured_smooth() -> AnalyticProblem:
    """Interface-free Poisson problem with a smooth trigonometric solution.

    Used to confirm the plain fourth-order convergence of the compact
    scheme with no corrections in play.
    """
    u = sp.sin(2 * X) * sp.exp(Y)
    return _build("smooth", u=u, bodies=[])


@dataclass
class EllipticRun:
    """One assembled-and-solved instance of a problem on an n-by-n grid."""

    problem: AnalyticProblem
    grid: Grid
    classification: Classification
    system: SparseSystem
    values: np.ndarray
    report: SolveReport

    def exact_values(self) -> np.ndarray:
        Xg, Yg = self.grid.meshgrid()
        return self.problem.exact.on_sides(Xg, Yg, self.classification.side)

    def max_error(self) -> float:
        return max_error(self.values, self.problem, self.grid,
                         classification=self.classification)


def solve_elliptic(problem: AnalyticProblem, n: int, *, order: Optional[int] = None,
                   corner: str = "taylor", tol: Optional[float] = None,
                   corrections_enabled: bool = True) -> EllipticRun:
    """Assemble a problem on an n-by-n grid and solve it.

    The solver is BiCGStab with an ILU(0) preconditioner; without the
    factorization the iteration stalls on interface systems (identity
    boundary rows sit next to O(1/h^2) stencil rows).  The default
    tolerance is 1e-13 absolute; on strongly scaled systems the true
    residual bottoms out above that, in which case the best iterate is
    returned with converged=False while the error keeps the full benefit
    of the extra sweeps.
    """
    g = problem.grid_for(n)
    cls = classify(g, problem.bodies)
    bc = BoundarySpec.all_dirichlet(problem.boundary_value)
    system = assemble(g, cls, problem.fields, problem.jump_source, bc,
                      corner=corner, order=order,
                      corrections_enabled=corrections_enabled)
    if tol is None:
        tol = 1e-13
    x, report = bicgstab(system, tol=tol, precond=ilu0(system))
    return EllipticRun(problem, g, cls, system, x.reshape(g.shape), report)


def max_error(values: np.ndarray, problem: AnalyticProblem, grid: Grid, *,
              classification: Optional[Classification] = None,
              mask: Optional[np.ndarray] = None) -> float:
    """Infinity-norm error against the exact solution.

    mask marks nodes excluded from the comparison (used when body
    interiors are pinned rather than solved); by default every node
    counts.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ProblemError(f"field shape {values.shape} does not match grid {grid.shape}")
    if classification is None:
        classification = classify(grid, problem.bodies)
    exact = problem.exact.on_sides(*grid.meshgrid(), classification.side)
    err = np.abs(values - exact)
    if mask is not None:
        err = np.where(mask, 0.0, err)
    return float(err.max())


@dataclass
class ConvergenceRow:
    """One line of a grid refinement table."""

    n: int
    max_error: float
    roc: Optional[float] = None


def rate_of_convergence(e_prev: float, e: float, n_prev: int, n: int) -> float:
    """log(e_prev/e) / log(n/n_prev); equals the log2 error ratio on doubled grids."""
    if e == e_prev:
        return 0.0
    return math.log(e_prev / e) / math.log(n / n_prev)


def convergence_study(problem: AnalyticProblem, n_list, **solve_kw) -> list[ConvergenceRow]:
    """Solve on each grid in ascending n_list and rate the error decay."""
    n_list = list(n_list)
    if len(n_list) < 2:
        raise ProblemError("a convergence study needs at least two grid sizes")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ProblemError("grid sizes must be strictly ascending")
    rows: list[ConvergenceRow] = []
    for n in n_list:
        run = solve_elliptic(problem, n, **solve_kw)
        err = run.max_error()
        roc = None
        if rows:
            roc = rate_of_convergence(rows[-1].max_error, err, rows[-1].n, n)
        rows.append(ConvergenceRow(n, err, roc))
    return rows


def format_table(rows: list[ConvergenceRow], title: str = "") -> str:
    """Aligned text table with columns N, max error, ROC."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'N':>6}  {'max error':>12}  {'ROC':>6}")
    for row in rows:
        roc = f"{row.roc:6.2f}" if row.roc is not None else " " * 6
        lines.append(f"{row.n:>6}  {row.max_error:>12.3e}  {roc}")
    return "\n".join(lines)


def format_csv(rows: list[ConvergenceRow]) -> str:
    """Machine-readable rows: n,max_error,roc (roc empty on the first row)."""
    lines = ["n,max_error,roc"]
    for row in rows:
        roc = f"{row.roc:.6f}" if row.roc is not None else ""
        lines.append(f"{row.n},{row.max_error:.12e},{roc}")
    return "\n".join(lines)
