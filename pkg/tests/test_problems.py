import math

import numpy as np
import pytest

from immersed import problems
from immersed.problems import (
    ConvergenceRow,
    ProblemError,
    convergence_study,
    format_csv,
    format_table,
    manufactured_smooth,
    max_error,
    rate_of_convergence,
    solve_elliptic,
)

# the problem factories carry test_-prefixed names; qualify them so pytest
# does not collect them as test functions
case_1 = problems.test_case_1
case_2 = problems.test_case_2
case_3 = problems.test_case_3
case_4 = problems.test_case_4

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def all_problems():
    return [
        case_1(),
        case_2(10.0, 0.1),
        case_3(2.0),
        case_4(5000.0),
    ]


def test_case_1_exact_point_values():
    p = case_1()
    assert p.exact(0.0, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert p.exact(1.0, 0.0) == pytest.approx(1.0 - math.log(2.0), abs=1e-15)


def test_case_1_solution_is_continuous_across_the_circle():
    p = case_1()
    assert p.u_jump_zero
    assert p.jump_check(count=50, seed=3)["u"] <= 1e-10


def test_case_2_exact_inside_is_the_squared_radius():
    p = case_2(10.0, 0.1)
    assert p.exact(0.3, 0.4) == pytest.approx(0.25, abs=1e-15)


def test_case_2_inner_coefficient_at_origin():
    p = case_2(10.0, 0.1)
    assert p.fields.evaluate("beta", 0.0, 0.0, -1) == pytest.approx(1.0)


def test_case_2_rejects_zero_outer_coefficient():
    with pytest.raises(ProblemError):
        case_2(0.0)


def test_case_3_level_set_vanishes_on_the_petal_curve():
    p = case_3(2.0)
    body = p.bodies[0]
    c = 0.2 / math.sqrt(20.0)
    assert body.phi(c + 0.5, c) == pytest.approx(0.0, abs=1e-14)
    # petal extremes sit at r0 +- amplitude where sin(w*theta) = +-1
    t_max = math.pi / 10.0
    assert body.phi(c + 0.7 * math.cos(t_max), c + 0.7 * math.sin(t_max)) == \
        pytest.approx(0.0, abs=1e-14)


def test_case_3_exact_inside_scales_with_the_inner_coefficient():
    p = case_3(2.0, beta_minus=4.0)
    assert p.exact(0.1, -0.05) == pytest.approx((0.1**2 + 0.05**2) / 4.0, abs=1e-15)


def test_case_3_rejects_zero_coefficients():
    with pytest.raises(ProblemError):
        case_3(0.0)
    with pytest.raises(ProblemError):
        case_3(2.0, beta_minus=0.0)


def test_case_4_exact_inside_matches_the_closed_form():
    rho = 5000.0
    p = case_4(rho)
    denom = rho + 1 + 0.25 * (rho - 1)
    assert p.exact(0.2, 0.1) == pytest.approx(0.4 / denom, rel=1e-14)


def test_case_4_unit_contrast_reduces_to_linear_field():
    p = case_4(1.0)
    xs = np.linspace(-1.0, 1.0, 9)
    X, Y = np.meshgrid(xs, xs)
    assert np.abs(p.exact(X, Y) - X).max() == 0.0


def test_case_4_homogeneous_jump_conditions():
    p = case_4(5000.0)
    checks = p.jump_check(count=50, seed=11)
    assert p.u_jump_zero and p.flux_jump_zero
    assert checks["u"] <= 1e-10
    assert checks["flux"] <= 1e-10


def test_case_4_rejects_nonpositive_contrast():
    for rho in (0.0, -2.0):
        with pytest.raises(ProblemError):
            case_4(rho)


def test_exact_branches_satisfy_the_pde_everywhere():
    for p in all_problems() + [manufactured_smooth(), case_2(0.001),
                               case_2(1000.0), case_4(1 / 5000.0)]:
        assert p.pde_residual(count=100, seed=7) <= 1e-10, p.name


def test_declared_zero_jumps_hold_on_fifty_interface_samples():
    for p in all_problems():
        checks = p.jump_check(count=50, seed=5)
        if p.u_jump_zero:
            assert checks["u"] <= 1e-10, p.name
        if p.flux_jump_zero:
            assert checks["flux"] <= 1e-10, p.name


def test_boundary_values_equal_exact_solution_on_the_frame():
    for p in all_problems():
        g = p.grid_for(13)
        X, Y = g.meshgrid()
        frame = np.zeros(g.shape, dtype=bool)
        frame[0, :] = frame[-1, :] = True
        frame[:, 0] = frame[:, -1] = True
        want = p.exact(X[frame], Y[frame])
        got = p.boundary_value(X[frame], Y[frame])
        assert np.array_equal(got, want), p.name


def test_max_error_is_zero_for_the_sampled_exact_solution():
    p = case_1()
    g = p.grid_for(21)
    X, Y = g.meshgrid()
    assert max_error(p.exact(X, Y), p, g) == 0.0


def test_max_error_reports_a_single_perturbed_node():
    p = case_1()
    g = p.grid_for(21)
    X, Y = g.meshgrid()
    values = p.exact(X, Y)
    values[7, 9] += 1e-3
    assert max_error(values, p, g) == pytest.approx(1e-3, rel=1e-12)


def test_max_error_respects_an_exclusion_mask():
    p = case_1()
    g = p.grid_for(21)
    X, Y = g.meshgrid()
    values = p.exact(X, Y)
    values[7, 9] += 1e-3
    mask = np.zeros(g.shape, dtype=bool)
    mask[7, 9] = True
    assert max_error(values, p, g, mask=mask) == 0.0


def test_max_error_rejects_mismatched_shapes():
    p = case_1()
    g = p.grid_for(21)
    with pytest.raises(ProblemError):
        max_error(np.zeros((5, 5)), p, g)


def test_rate_of_convergence_matches_the_tabulated_value():
    assert rate_of_convergence(7.15e-4, 7.54e-5, 20, 40) == pytest.approx(3.24, abs=0.01)
    assert rate_of_convergence(1e-3, 1e-3, 20, 40) == 0.0


def test_convergence_study_validates_the_grid_list():
    p = case_1()
    with pytest.raises(ProblemError):
        convergence_study(p, [20])
    with pytest.raises(ProblemError):
        convergence_study(p, [40, 20])


def test_case_1_errors_decrease_monotonically():
    rows = convergence_study(case_1(), [20, 30, 40])
    errs = [r.max_error for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert rows[0].roc is None
    assert all(r.roc is not None for r in rows[1:])


def test_case_1_medium_grid_error_is_within_the_reproduction_ceiling():
    run = solve_elliptic(case_1(), 40)
    assert run.max_error() <= 2.3e-4


def test_smooth_problem_converges_at_fourth_order():
    rows = convergence_study(manufactured_smooth(), [20, 40, 80])
    for row in rows[1:]:
        assert 3.7 <= row.roc <= 4.3


def test_solver_report_certifies_an_explicit_tolerance():
    run = solve_elliptic(case_1(), 24, tol=1e-11)
    assert run.report.converged
    assert run.report.final_residual <= 1e-11


def test_format_table_and_csv_round_trip_the_rows():
    rows = [ConvergenceRow(20, 7.15e-4), ConvergenceRow(40, 7.54e-5, 3.24)]
    table = format_table(rows, "demo")
    assert table.splitlines()[0] == "demo"
    assert "7.150e-04" in table and "3.24" in table
    csv = format_csv(rows)
    lines = csv.splitlines()
    assert lines[0] == "n,max_error,roc"
    assert lines[1].startswith("20,") and lines[1].endswith(",")
    assert lines[2].split(",")[2] == "3.240000"
