"""Grid construction, level-set classification and crossing location.

The classifier is checked against a brute-force per-node sign-test oracle,
and crossing coordinates against closed-form circle intersections.
"""

import math

import numpy as np
import pytest

from immersed.grid import (
    GridError,
    LevelSetBody,
    build_grid,
    circle,
    classify,
    classify_case,
    ellipse,
    find_crossing,
    star,
)


def oracle_classify(grid, bodies):
    """Independent double-loop classifier: side by sign of phi, irregular by
    phi_c * phi_n <= 0 over the eight stencil neighbors."""
    side = np.ones((grid.n, grid.m), dtype=int)
    irregular = np.zeros((grid.n, grid.m), dtype=bool)
    for j in range(grid.n):
        for i in range(grid.m):
            for body in bodies:
                if float(body.phi(grid.x[i], grid.y[j])) <= 0.0:
                    side[j, i] = -1
    for j in range(1, grid.n - 1):
        for i in range(1, grid.m - 1):
            for body in bodies:
                pc = float(body.phi(grid.x[i], grid.y[j]))
                hit = False
                for da in (-1, 0, 1):
                    for db in (-1, 0, 1):
                        if (da, db) == (0, 0):
                            continue
                        pn = float(body.phi(grid.x[i + da], grid.y[j + db]))
                        if pc * pn <= 0.0:
                            hit = True
                irregular[j, i] |= hit
    return side, irregular


def test_build_grid_spacing_and_indexing():
    g = build_grid(-1.0, 1.0, -1.0, 1.0, 21, 21)
    assert g.h == pytest.approx(0.1) and g.l == pytest.approx(0.1)
    assert g.index(3, 5) == 5 * 21 + 3
    assert g.node(10, 10) == pytest.approx((0.0, 0.0))

    g2 = build_grid(0.0, 1.0, 0.0, 2.0, 11, 21)
    assert g2.h == pytest.approx(0.1) and g2.l == pytest.approx(0.1)
    assert g2.index(3, 5) == 58
    X, Y = g2.meshgrid()
    assert X.shape == (21, 11)
    assert X[4, 7] == pytest.approx(g2.x[7]) and Y[4, 7] == pytest.approx(g2.y[4])


def test_build_grid_rejects_bad_extents():
    with pytest.raises(GridError):
        build_grid(1.0, -1.0, 0.0, 1.0, 11, 11)
    with pytest.raises(GridError):
        build_grid(0.0, 1.0, 0.0, 1.0, 4, 11)


def test_circle_crossing_closed_form():
    # row y = 0.35 meets the r = 1/2 circle at x* = sqrt(0.25 - 0.1225)
    g = build_grid(-1.0, 1.0, -1.0, 1.0, 41, 41)
    body = circle(0.0, 0.0, 0.5)
    cls = classify(g, [body])
    j = 27                                  # y = 0.35
    assert g.y[j] == pytest.approx(0.35)
    xstar = math.sqrt(0.25 - 0.1225)
    hits = [c for (ax, i, jj), c in cls.crossings.items()
            if ax == "x" and jj == j and c.x > 0]
    assert len(hits) == 1
    c = hits[0]
    assert c.x == pytest.approx(xstar, abs=1e-12)
    assert c.y == pytest.approx(0.35)
    assert c.offset_lo <= 0.0 <= c.offset_hi
    assert c.offset_hi - c.offset_lo == pytest.approx(g.h)
    assert g.x[c.i] == pytest.approx(c.x + c.offset_lo)
    # circle normals point radially outward
    assert c.theta == pytest.approx(math.atan2(c.y, c.x), abs=1e-10)


def test_crossing_residual_is_tiny():
    g = build_grid(-1.0, 1.0, -1.0, 1.0, 33, 33)
    body = star(0.5, 0.1, 5)
    cls = classify(g, [body])
    assert len(cls.crossings) > 20
    for c in cls.crossings.values():
        assert abs(float(body.phi(c.x, c.y))) <= 1e-10
        gx, gy = body.grad_phi(c.x, c.y)
        assert c.theta == pytest.approx(math.atan2(gy, gx))


def test_classifier_matches_oracle_random_bodies():
    rng = np.random.default_rng(20240814)
    for _ in range(6):
        kind = rng.integers(0, 3)
        if kind == 0:
            body = circle(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                          rng.uniform(0.3, 0.55))
        elif kind == 1:
            body = ellipse(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                           rng.uniform(0.3, 0.5), rng.uniform(0.15, 0.3),
                           tilt=rng.uniform(0, math.pi))
        else:
            body = star(rng.uniform(0.4, 0.5), rng.uniform(0.05, 0.12),
                        int(rng.integers(3, 7)))
        m = int(rng.integers(20, 36))
        g = build_grid(-1.0, 1.0, -1.0, 1.0, m, m + 3)
        cls = classify(g, [body])
        side_o, irr_o = oracle_classify(g, [body])
        assert np.array_equal(cls.side, side_o)
        assert np.array_equal(cls.irregular, irr_o)
        assert np.array_equal(cls.in_body, side_o < 0)


def test_exact_node_touch_is_irregular_with_node_crossing():
    # h = 0.125 grid puts a node exactly at (0.5, 0) on the r = 1/2 circle
    g = build_grid(-1.0, 1.0, -1.0, 1.0, 17, 17)
    body = circle(0.0, 0.0, 0.5)
    assert float(body.phi(g.x[12], g.y[8])) == 0.0
    cls = classify(g, [body])
    assert cls.side[8, 12] == -1          # on-interface nodes count as minus
    assert cls.irregular[8, 11] and cls.irregular[8, 12]
    c = cls.segment_crossing("x", 11, 8)
    assert c is not None and c.x == pytest.approx(0.5, abs=0) and c.offset_hi == 0.0
    c2 = cls.segment_crossing("x", 12, 8)
    assert c2 is not None and c2.x == pytest.approx(0.5, abs=0) and c2.offset_lo == 0.0


def test_point_class_cases_on_circle():
    g = build_grid(-1.0, 1.0, -1.0, 1.0, 41, 41)
    cls = classify(g, [circle(0.0, 0.0, 0.5)])
    seen = set()
    for pc in cls.irregular_points():
        assert pc.kind == "irregular"
        assert pc.sides[1, 1] == pc.side
        assert pc.body == 0
        if pc.side == -1:
            assert pc.in_body
        seen.add(pc.case_id)
        if pc.irregular_axis in ("x", "y", "xy"):
            assert pc.crossings, "cut nodes must carry incident crossings"
    # a resolved circle shows single-axis cuts on both axes
    assert {1, 4} <= seen or {2, 3, 5, 6} & seen


def test_classify_case_taxonomy():
    E, W, N, S = (1, 0), (-1, 0), (0, 1), (0, -1)
    NE, NW, SE, SW = (1, 1), (-1, 1), (1, -1), (-1, -1)
    assert classify_case({NE, E, SE}) == (1, "+x")
    assert classify_case({NW, W, SW}) == (1, "-x")
    assert classify_case({NE, E}) == (2, "+x")
    assert classify_case({E, SE}) == (3, "+x")
    assert classify_case({NW, N, NE}) == (4, "+y")
    assert classify_case({SW, S, SE}) == (4, "-y")
    assert classify_case({NW, N}) == (5, "+y")
    assert classify_case({N, NE}) == (6, "+y")
    assert classify_case({E, N, NE, SE}) == (7, "+x+y")
    assert classify_case({E, N, NE}) == (8, "+x+y")
    assert classify_case({W, S, SW, NW}) == (7, "-x-y")
    assert classify_case({SW})[1] == "d"
    assert classify_case(set()) == (0, "")


def test_find_crossing_midpoint_secant():
    g = build_grid(0.0, 1.0, 0.0, 1.0, 11, 11)
    body = LevelSetBody(lambda x, y: x - 0.5371, lambda x, y: (1.0, 0.0))
    c = find_crossing(g, body, "x", 5, 3)
    assert c.x == pytest.approx(0.5371, abs=1e-13)
    assert c.axis == "x" and c.j == 3


def test_grid_aligned_interface_rejected():
    g = build_grid(-1.0, 1.0, -1.0, 1.0, 17, 17)
    line = LevelSetBody(lambda x, y: np.asarray(x) - 0.5, lambda x, y: (1.0, 0.0))
    with pytest.raises(GridError):
        classify(g, [line])


def test_body_near_boundary_rejected():
    g = build_grid(-1.0, 1.0, -1.0, 1.0, 21, 21)
    with pytest.raises(GridError):
        classify(g, [circle(0.0, 0.0, 0.95)])


def test_bodies_too_close_rejected():
    g = build_grid(-1.0, 1.0, -1.0, 1.0, 81, 81)
    ok = [circle(-0.4, 0.0, 0.2, "left"), circle(0.4, 0.0, 0.2, "right")]
    cls = classify(g, ok)
    assert len({c.body for c in cls.crossings.values()}) == 2
    tight = [circle(-0.215, 0.0, 0.2, "left"), circle(0.215, 0.0, 0.2, "right")]
    with pytest.raises(GridError):
        classify(g, tight)


def test_overlapping_bodies_rejected():
    g = build_grid(-1.0, 1.0, -1.0, 1.0, 41, 41)
    with pytest.raises(GridError):
        classify(g, [circle(-0.1, 0.0, 0.3), circle(0.1, 0.0, 0.3)])


def test_star_gradient_matches_finite_difference():
    body = star(0.5, 0.1, 6, cx=0.05, cy=-0.03)
    rng = np.random.default_rng(7)
    eps = 1e-7
    for _ in range(50):
        x, y = rng.uniform(-0.8, 0.8, size=2)
        if math.hypot(x - 0.05, y + 0.03) < 0.05:
            continue
        gx, gy = body.grad_phi(x, y)
        fx = (body.phi(x + eps, y) - body.phi(x - eps, y)) / (2 * eps)
        fy = (body.phi(x, y + eps) - body.phi(x, y - eps)) / (2 * eps)
        assert gx == pytest.approx(fx, rel=1e-5, abs=1e-5)
        assert gy == pytest.approx(fy, rel=1e-5, abs=1e-5)


def test_ellipse_gradient_matches_finite_difference():
    body = ellipse(0.1, -0.2, 0.5, 0.25, tilt=0.4)
    rng = np.random.default_rng(11)
    eps = 1e-7
    for _ in range(30):
        x, y = rng.uniform(-0.9, 0.9, size=2)
        gx, gy = body.grad_phi(x, y)
        fx = (body.phi(x + eps, y) - body.phi(x - eps, y)) / (2 * eps)
        fy = (body.phi(x, y + eps) - body.phi(x, y - eps)) / (2 * eps)
        assert gx == pytest.approx(fx, rel=1e-5, abs=1e-5)
        assert gy == pytest.approx(fy, rel=1e-5, abs=1e-5)
