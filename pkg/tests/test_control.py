import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robinopt import (
    BoundaryControl, BoxBounds, P1Function, control_l2_error, project_box,
    projected_product_error, q_h_project, r_h_midpoint, r_h_simpson, trace_product,
)
from robinopt.control import _roots_in_unit_interval, edgewise_projected_error_sq, write_control_csv

UNBOUNDED = BoxBounds(0.0, None)


def test_box_bounds():
    assert BoxBounds(0.0, math.inf).upper is None
    assert not UNBOUNDED.bounded_above
    assert np.array_equal(project_box(np.array([-1.0, 0.5, 9.0]), BoxBounds(0.0, 1.0)),
                          [0.0, 0.5, 1.0])
    assert np.array_equal(project_box(np.array([-1.0, 9.0]), UNBOUNDED), [0.0, 9.0])
    with pytest.raises(ValueError):
        BoxBounds(1.0, 0.5)


def test_control_algebra(meshes):
    m = meshes[2]
    a = BoundaryControl.constant(m, 2.0)
    b = BoundaryControl(m, np.arange(m.n_boundary_edges, dtype=float))
    assert a.inner(a) == pytest.approx(16.0)  # |Γ| = 4
    assert a.norm() == pytest.approx(4.0)
    c = a + 0.5 * b - a
    assert np.allclose(c.values, 0.5 * b.values)
    d = a.copy()
    d.values[0] = -1
    assert a.values[0] == 2.0


def test_r_h_midpoint_affine_mean(meshes):
    m = meshes[3]
    u = lambda x: 0.3 - 2.0 * x[:, 0] + 5.0 * x[:, 1]
    exact = q_h_project(u, m)
    assert np.abs(r_h_midpoint(u, m).values - exact.values).max() < 1e-14


def test_q_h_is_mean(meshes):
    m = meshes[2]
    u = lambda x: x[:, 0] ** 3 + x[:, 1] ** 4
    q = q_h_project(u, m)
    # bottom edge [0, 1/4] × {0}: mean of x³ is 1/256
    e = np.flatnonzero(np.all(np.isclose(m.boundary_midpoints, [0.125, 0.0]), axis=1))[0]
    assert q.values[e] == pytest.approx(1 / 256, abs=1e-15)


def test_simpson_of_trace_product(meshes, rng):
    m = meshes[2]
    y = P1Function(m, rng.standard_normal(m.n_vertices))
    p = P1Function(m, rng.standard_normal(m.n_vertices))
    mean = r_h_simpson(trace_product(y, p)).values
    x, w = np.polynomial.legendre.leggauss(4)
    t = 0.5 * (x + 1)
    be = m.boundary_edges
    yv = y.values[be[:, 0], None] * (1 - t) + y.values[be[:, 1], None] * t
    pv = p.values[be[:, 0], None] * (1 - t) + p.values[be[:, 1], None] * t
    assert np.allclose(mean, 0.5 * (yv * pv) @ w, rtol=0, atol=1e-14)


def test_control_l2_error_nested(meshes):
    coarse = BoundaryControl.constant(meshes[1], 1.0)
    fine = BoundaryControl.constant(meshes[3], 3.0)
    assert control_l2_error(fine, coarse) == pytest.approx(4.0)
    assert control_l2_error(coarse, fine) == pytest.approx(4.0)


def test_kink_closed_form():
    q = np.array([[-0.5, 1.0, 0.0]])
    zero = np.zeros((1, 3))
    val = edgewise_projected_error_sq(q, zero, [1.0], 1.0, UNBOUNDED)
    assert math.sqrt(val) == pytest.approx(math.sqrt(1 / 24), abs=1e-12)


def test_kink_off_node_needs_split():
    q = np.array([[-1 / 3, 1.0, 0.0]])
    zero = np.zeros((1, 3))
    split = edgewise_projected_error_sq(q, zero, [1.0], 1.0, UNBOUNDED)
    plain = edgewise_projected_error_sq(q, zero, [1.0], 1.0, UNBOUNDED, split=False)
    assert split == pytest.approx(8 / 81, abs=1e-15)
    assert abs(plain - split) > 0.01 * split


def test_upper_bound_kinks():
    # linear 2t on [0,1] clipped to [0, 1]: ∫ min(2t, 1)² = 1/6 + 1/2
    q = np.array([[0.0, 2.0, 0.0]])
    val = edgewise_projected_error_sq(q, np.zeros((1, 3)), [1.0], 1.0, BoxBounds(0.0, 1.0))
    assert val == pytest.approx(2 / 3, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_roots_are_roots(c0, c1, c2):
    r = _roots_in_unit_interval(np.array([c0]), np.array([c1]), np.array([c2]))[0]
    for t in r[r < 1.0]:
        assert 0 < t < 1
        assert abs(c0 + c1 * t + c2 * t * t) <= 1e-9 * (abs(c0) + abs(c1) + abs(c2))


def test_projected_product_error_symmetric_and_nested(meshes, rng):
    fine, coarse = meshes[3], meshes[2]
    yf, pf = (P1Function(fine, rng.uniform(-1, 1, fine.n_vertices)) for _ in range(2))
    yc, pc = (P1Function(coarse, rng.uniform(-1, 1, coarse.n_vertices)) for _ in range(2))
    e1 = projected_product_error(yf, pf, yc, pc, 0.1, UNBOUNDED)
    e2 = projected_product_error(yf, pf, yc.lift(fine), pc.lift(fine), 0.1, UNBOUNDED)
    assert e1 == pytest.approx(e2, rel=1e-14)
    assert projected_product_error(yf, pf, yf, pf, 0.1, UNBOUNDED) == 0.0


def test_write_control_csv(tmp_path, meshes):
    u = BoundaryControl.constant(meshes[1], 0.5)
    path = tmp_path / "u.csv"
    write_control_csv(u, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "edge_index,midpoint_x,midpoint_y,value"
    assert len(lines) == 9
