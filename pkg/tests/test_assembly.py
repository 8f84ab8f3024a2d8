import numpy as np
import pytest
import sympy as sym

from immersed.assembly import (
    ROW_BODY,
    ROW_DIRICHLET,
    ROW_IRREGULAR,
    ROW_NEUMANN,
    ROW_REGULAR,
    AssemblyError,
    BoundarySpec,
    assemble,
    dirichlet,
    neumann,
)
from immersed.grid import build_grid, circle, classify
from immersed.hoc import CoefficientField
from immersed.jump import TwoSidedJumpSource, ZeroJumpSource


def poisson_setup(npts, bodies=(), box=(-1.0, 1.0, -1.0, 1.0)):
    grid = build_grid(*box, npts, npts)
    cls = classify(grid, list(bodies))
    return grid, cls


def test_five_by_five_all_dirichlet_row_counts():
    grid, cls = poisson_setup(5)
    field = CoefficientField.constant(beta=1.0)
    sys = assemble(grid, cls, field, ZeroJumpSource(), BoundarySpec.all_dirichlet(0.0))
    kinds = sys.row_kind
    assert np.sum(kinds == ROW_REGULAR) == 9
    assert np.sum(kinds == ROW_DIRICHLET) == 16
    A = sys.matrix
    for r in np.nonzero(kinds == ROW_DIRICHLET)[0]:
        row = A.getrow(r).toarray().ravel()
        assert row[r] == 1.0
        row[r] = 0.0
        assert not row.any()
    for r in np.nonzero(kinds == ROW_REGULAR)[0]:
        assert A.indptr[r + 1] - A.indptr[r] == 9


def test_dirichlet_rhs_holds_boundary_values():
    grid, cls = poisson_setup(7)
    field = CoefficientField.constant(beta=1.0)
    bc = BoundarySpec.all_dirichlet(lambda x, y: x + 10.0 * y)
    sys = assemble(grid, cls, field, ZeroJumpSource(), bc)
    for r in np.nonzero(sys.row_kind == ROW_DIRICHLET)[0]:
        i, j = r % grid.m, r // grid.m
        assert sys.rhs[r] == grid.x[i] + 10.0 * grid.y[j]


def test_corrected_row_count_matches_brute_force():
    body = circle(0.0, 0.0, 0.5)
    grid, cls = poisson_setup(20, [body])
    field = CoefficientField.constant(beta=1.0)
    sys = assemble(grid, cls, field, ZeroJumpSource(), BoundarySpec.all_dirichlet(1.0))

    X, Y = grid.meshgrid()
    phi = body.phi(X, Y)
    inside = phi <= 0
    expected = 0
    for j in range(1, grid.n - 1):
        for i in range(1, grid.m - 1):
            neigh = inside[j - 1 : j + 2, i - 1 : i + 2]
            if neigh.any() and not neigh.all():
                expected += 1
    assert np.sum(sys.row_kind == ROW_IRREGULAR) == expected
    assert expected > 0


def test_zero_jumps_bitwise_identical_to_disabled_corrections():
    body = circle(0.1, -0.05, 0.4)
    grid, cls = poisson_setup(24, [body])
    xs, ys = sym.symbols("x y")
    field = CoefficientField.from_sympy(
        xs, ys, beta=(2 + xs**2, sym.Integer(3)), f=sym.sin(xs + ys)
    )
    bc = BoundarySpec.all_dirichlet(0.0)
    on = assemble(grid, cls, field, ZeroJumpSource(), bc, corrections_enabled=True)
    off = assemble(grid, cls, field, ZeroJumpSource(), bc, corrections_enabled=False)
    assert np.array_equal(on.matrix.indptr, off.matrix.indptr)
    assert np.array_equal(on.matrix.indices, off.matrix.indices)
    assert np.array_equal(on.matrix.data, off.matrix.data)
    assert np.array_equal(on.rhs, off.rhs)
    assert np.array_equal(on.row_kind, off.row_kind)


def test_row_sum_on_constant_field_equals_kappa():
    kappa = 1.7
    grid, cls = poisson_setup(17)
    field = CoefficientField.constant(beta=2.3, c=0.4, d=-0.7, kappa=kappa)
    sys = assemble(grid, cls, field, ZeroJumpSource(), BoundarySpec.all_dirichlet(0.0))
    action = sys.matrix @ np.ones(grid.m * grid.n)
    reg = sys.row_kind == ROW_REGULAR
    assert reg.any()
    assert np.max(np.abs(action[reg] - kappa)) < 1e-10


def test_structurally_symmetric_pattern():
    body = circle(0.0, 0.0, 0.45)
    grid, cls = poisson_setup(21, [body])
    field = CoefficientField.constant(beta=1.0)
    bc = BoundarySpec(
        dirichlet(0.0), neumann(0.0), dirichlet(lambda x, y: y), dirichlet(0.0)
    )
    sys = assemble(grid, cls, field, ZeroJumpSource(), bc, mask_bodies=True)
    pat = sys.matrix.copy()
    pat.data = np.ones_like(pat.data)
    assert (pat != pat.T).nnz == 0


def test_neumann_rows_use_third_order_one_sided_weights():
    grid, cls = poisson_setup(9)
    field = CoefficientField.constant(beta=1.0)
    bc = BoundarySpec(dirichlet(0.0), neumann(2.5), dirichlet(0.0), dirichlet(0.0))
    sys = assemble(grid, cls, field, ZeroJumpSource(), bc)
    m, h = grid.m, grid.h
    j = 4
    r = j * m + (m - 1)
    assert sys.row_kind[r] == ROW_NEUMANN
    row = sys.matrix.getrow(r).toarray().ravel()
    for step, coeff in enumerate((11.0, -18.0, 9.0, -2.0)):
        assert row[j * m + (m - 1 - step)] == pytest.approx(coeff / (6 * h))
    assert sys.rhs[r] == 2.5
    # corners adjoin a Dirichlet edge, which wins
    for r in (m - 1, (grid.n - 1) * m + m - 1):
        assert sys.row_kind[r] == ROW_DIRICHLET


def test_outward_normal_sign_convention():
    # u = x has du/dn = +1 on the right edge and -1 on the left edge
    grid, cls = poisson_setup(9)
    u = np.tile(grid.x, grid.n)
    field = CoefficientField.constant(beta=1.0)
    bc = BoundarySpec(neumann(0.0), neumann(0.0), dirichlet(0.0), dirichlet(0.0))
    sys = assemble(grid, cls, field, ZeroJumpSource(), bc)
    left = 4 * grid.m
    right = 4 * grid.m + grid.m - 1
    act = sys.matrix @ u
    assert act[left] == pytest.approx(-1.0, abs=1e-12)
    assert act[right] == pytest.approx(1.0, abs=1e-12)


def test_body_interior_rows_pin_zero():
    body = circle(0.0, 0.0, 0.45)
    grid, cls = poisson_setup(21, [body])
    field = CoefficientField.constant(beta=1.0)
    sys = assemble(
        grid, cls, field, ZeroJumpSource(), BoundarySpec.all_dirichlet(0.0),
        mask_bodies=True,
    )
    rows = np.nonzero(sys.row_kind == ROW_BODY)[0]
    assert rows.size > 0
    assert np.array_equal(rows, np.nonzero(cls.in_body.ravel())[0])
    for r in rows:
        row = sys.matrix.getrow(r).toarray().ravel()
        assert row[r] == 1.0
        row[r] = 0.0
        assert not row.any()
        assert sys.rhs[r] == 0.0


def test_permutation_consistency():
    body = circle(0.05, 0.0, 0.4)
    grid, cls = poisson_setup(15, [body])
    xs, ys = sym.symbols("x y")
    up = 1 + xs**3 + ys**2
    um = 2 * xs * ys + xs**2
    field = CoefficientField.from_sympy(xs, ys, beta=(1 + xs**2 / 4, 2 + ys**2 / 4))
    jumps = TwoSidedJumpSource.from_sympy(up, um, xs, ys)
    bc = BoundarySpec.all_dirichlet(lambda x, y: x - y)
    nat = assemble(grid, cls, field, jumps, bc)

    rng = np.random.default_rng(7)
    p = rng.permutation(grid.m * grid.n)
    per = assemble(grid, cls, field, jumps, bc, node_order=p)
    rec = per.matrix[p][:, p]
    assert np.array_equal(rec.toarray(), nat.matrix.toarray())
    assert rec.nnz == nat.matrix.nnz
    assert np.array_equal(per.rhs[p], nat.rhs)
    assert np.array_equal(per.row_kind[p], nat.row_kind)


def exact_residual(npts, u_plus, u_minus, beta_plus=None, beta_minus=None):
    xs, ys = sym.symbols("x y")
    body = circle(0.0, 0.0, 0.5)
    grid = build_grid(-1.0, 1.0, -1.0, 1.0, npts, npts)
    cls = classify(grid, [body])
    beta = sym.Integer(1) if beta_plus is None else (beta_minus, beta_plus)
    if beta_plus is None:
        cd = {}
    else:
        cd = dict(
            c=(sym.diff(beta_minus, xs), sym.diff(beta_plus, xs)),
            d=(sym.diff(beta_minus, ys), sym.diff(beta_plus, ys)),
        )
        fm = sym.expand(
            sym.diff(beta_minus * sym.diff(u_minus, xs), xs)
            + sym.diff(beta_minus * sym.diff(u_minus, ys), ys)
        )
        fp = sym.expand(
            sym.diff(beta_plus * sym.diff(u_plus, xs), xs)
            + sym.diff(beta_plus * sym.diff(u_plus, ys), ys)
        )
        cd["f"] = (fm, fp)
    field = CoefficientField.from_sympy(xs, ys, beta=beta, **cd)
    jumps = TwoSidedJumpSource.from_sympy(u_plus, u_minus, xs, ys)
    gp = sym.lambdify((xs, ys), u_plus, "numpy")
    bc = BoundarySpec.all_dirichlet(lambda x, y: gp(x, y))
    sys = assemble(grid, cls, field, jumps, bc)

    X, Y = grid.meshgrid()
    phi = body.phi(X, Y)
    um = sym.lambdify((xs, ys), u_minus, "numpy")
    umv = np.broadcast_to(np.asarray(um(X, Y), dtype=float), X.shape)
    u = np.where(phi <= 0, umv, gp(X, Y)).ravel()
    res = np.abs(sys.matrix @ u - sys.rhs)
    reg = np.max(res[sys.row_kind == ROW_REGULAR])
    irr = res[sys.row_kind == ROW_IRREGULAR]
    return reg, np.max(irr), np.mean(irr)


def test_exact_solution_residual_rates():
    # Regular rows see the full fourth-order truncation.  Corrected rows
    # transfer across-interface values with fourth-order accuracy, which the
    # 1/h^2 stencil scale turns into second-order row residuals; the global
    # solution stays fourth order because those rows live on a curve.
    xs, ys = sym.symbols("x y")
    u_plus = 1 - sym.log(2 * sym.sqrt(xs**2 + ys**2))
    u_minus = sym.Integer(1)
    r40 = exact_residual(40, u_plus, u_minus)
    r80 = exact_residual(80, u_plus, u_minus)
    assert r80[0] < r40[0] / 10.0
    assert r80[1] < r40[1] / 2.2
    assert r80[2] < r40[2] / 2.5

    # variable coefficients with a genuine two-sided field
    bp = sym.Integer(10)
    bm = xs**2 + ys**2 + 1
    u2p = (
        (1 - sym.Rational(1, 80) - sym.Rational(1, 10)) / 4
        + ((xs**2 + ys**2) ** 2 / 2 + xs**2 + ys**2) / 10
        + sym.log(2 * sym.sqrt(xs**2 + ys**2)) / 100
    )
    u2m = xs**2 + ys**2
    q40 = exact_residual(40, u2p, u2m, beta_plus=bp, beta_minus=bm)
    q80 = exact_residual(80, u2p, u2m, beta_plus=bp, beta_minus=bm)
    assert q80[0] < q40[0] / 10.0
    assert q80[1] < q40[1] / 2.2
    assert q80[2] < q40[2] / 2.5


def test_across_value_transfer_is_fourth_order():
    from immersed.jump import route_corrections

    xs, ys = sym.symbols("x y")
    up = 1 - sym.log(2 * sym.sqrt(xs**2 + ys**2))
    upf = sym.lambdify((xs, ys), up, "numpy")
    body = circle(0.0, 0.0, 0.5)
    means = []
    for npts in (40, 80):
        grid = build_grid(-1.0, 1.0, -1.0, 1.0, npts, npts)
        cls = classify(grid, [body])
        src = TwoSidedJumpSource.from_sympy(up, sym.Integer(1), xs, ys)
        errs = []
        for pc in cls.irregular_points():
            routes = route_corrections(pc, cls, src)
            sgn = 1.0 if pc.side == -1 else -1.0
            for (kind, da, db), val in routes.items():
                true = sgn * (upf(grid.x[pc.i + da], grid.y[pc.j + db]) - 1.0)
                errs.append(abs(val - true))
        means.append(np.mean(errs))
    assert means[1] < means[0] / 10.0


def test_missing_jump_data_raises():
    class Broken:
        def jumps_for(self, crossing):
            return None

    body = circle(0.0, 0.0, 0.5)
    grid, cls = poisson_setup(20, [body])
    field = CoefficientField.constant(beta=1.0)
    with pytest.raises(AssemblyError, match="jump"):
        assemble(grid, cls, field, Broken(), BoundarySpec.all_dirichlet(0.0))


def test_singular_coefficient_raises():
    grid, cls = poisson_setup(9)
    xs, ys = sym.symbols("x y")
    field = CoefficientField.from_sympy(xs, ys, beta=xs)
    with pytest.raises(AssemblyError, match="singular"):
        assemble(grid, cls, field, ZeroJumpSource(), BoundarySpec.all_dirichlet(0.0))


def test_dump_coordinate_round_trips(tmp_path):
    grid, cls = poisson_setup(5)
    field = CoefficientField.constant(beta=1.0)
    sys = assemble(grid, cls, field, ZeroJumpSource(), BoundarySpec.all_dirichlet(0.0))
    path = tmp_path / "system.txt"
    sys.dump_coordinate(path)
    rows, cols, vals = [], [], []
    for line in path.read_text().splitlines():
        r, c, v = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))
    import scipy.sparse as sp

    back = sp.coo_matrix((vals, (rows, cols)), shape=sys.shape).tocsr()
    assert np.array_equal(back.toarray(), sys.matrix.toarray())
    assert len(rows) == sys.matrix.nnz
