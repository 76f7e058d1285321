from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oubv.gaussian import build_grid
from oubv.geometry import (BallBody, GeometryError, HalfspaceBody, boundary_gradient_bound, box_body,
                           cylindrical_approximation, hausdorff_boundary_distance, interval_body,
                           minkowski_eval, mollifier_constant, mollifier_first_moment, mollifier_rule,
                           nested_on_samples, outward_normal, parse_domain, read_body_file,
                           regular_polygon_halfspaces, smooth_body)

pt2 = st.tuples(st.floats(-4, 4), st.floats(-4, 4)).map(np.array)


def test_square_and_ball_gauges():
    sq = box_body(2, 1.0)
    assert sq.gauge([0.5, 0.25]) == pytest.approx(0.5)
    assert BallBody(1.0, dim=2).gauge([2.0, 0.0]) == pytest.approx(2.0)
    assert minkowski_eval(sq, [0.0, -3.0]) == pytest.approx(3.0)


def test_interval_center_and_gauge():
    I = interval_body(-1.0, 1.0)
    assert I.gauge([0.5]) == pytest.approx(0.5)
    assert I.gauge([-2.0]) == pytest.approx(2.0)


@settings(max_examples=60, deadline=None)
@given(pt2, pt2, st.floats(0, 1))
def test_polygon_gauge_convex(x, y, s):
    body = HalfspaceBody(*zip(*regular_polygon_halfspaces(5, 1.0)))
    mx, my = body.gauge(x), body.gauge(y)
    assert body.gauge((1 - s) * x + s * y) <= (1 - s) * mx + s * my + 1e-12


@settings(max_examples=60, deadline=None)
@given(pt2, st.floats(0.01, 10))
def test_gauge_homogeneous(x, c):
    body = HalfspaceBody([[1, 0.2], [-1, 0.5], [0, -1], [0.3, 1]], [1.0, 0.8, 1.2, 0.9])
    assert body.gauge(body.center + c * (x - body.center)) == pytest.approx(c * body.gauge(x), rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(pt2, pt2)
def test_gauge_lipschitz(x, y):
    for body in (box_body(2, 0.7), BallBody(1.3, dim=2)):
        assert abs(body.gauge(x) - body.gauge(y)) <= np.linalg.norm(x - y) / body.inradius + 1e-12


def test_unbounded_ray_exit():
    strip = parse_domain("strip:1", 2)
    s = strip.ray_exit(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert s[0] == pytest.approx(1.0) and math.isinf(s[1])


def test_mollifier_constants():
    _, w = mollifier_rule(2, 9)
    assert w.sum() == pytest.approx(1.0, abs=1e-14) and np.all(w > 0)
    assert mollifier_constant(1) == pytest.approx(2.25228, rel=1e-4)
    assert mollifier_first_moment(1) == pytest.approx(0.33445, rel=1e-4)


def test_smooth_body_contains_and_rounds_corners():
    sq = box_body(2, 1.0)
    sm = smooth_body(sq, 0.05)
    assert sm.gauge([1.0, 1.0]) < 1.0
    assert nested_on_samples(sm, sq)
    g, radial = boundary_gradient_bound(sm)
    assert g > 0 and radial > 0


def test_smooth_body_conditions():
    sq = box_body(2, 1.0)
    with pytest.raises(GeometryError):
        smooth_body(sq, 0.3)
    with pytest.raises(GeometryError):
        smooth_body(sq, 0.1, eta=0.2)
    with pytest.raises(GeometryError):
        smooth_body(smooth_body(sq, 0.1), 0.05)


def test_outward_normals():
    assert np.allclose(outward_normal(BallBody(1.0, dim=2), [1.0, 0.0]), [1.0, 0.0], atol=1e-6)
    assert np.allclose(outward_normal(box_body(2, 1.0), [1.0, 0.3]), [1.0, 0.0], atol=1e-6)
    with pytest.raises(GeometryError):
        outward_normal(box_body(2, 1.0), [1.0, 1.0])
    with pytest.raises(GeometryError):
        outward_normal(box_body(2, 1.0), [0.2, 0.3])


def test_euler_relation_for_homogeneous_gauges():
    x = np.array([0.3, -0.8])
    for body in (box_body(2, 1.0), BallBody(0.9, dim=2)):
        from oubv.geometry import gauge_gradient
        g = gauge_gradient(body, x)[0]
        assert g @ (x - body.center) == pytest.approx(body.gauge(x), rel=1e-6)


def test_hausdorff_concentric_balls():
    est = hausdorff_boundary_distance(BallBody(1.0, dim=2), BallBody(1.2, dim=2), R=3.0)
    assert est.value == pytest.approx(0.2, abs=1e-9)
    assert est.resolution < 0.01


def test_hausdorff_smoothing_bound():
    sq = box_body(2, 1.0)
    sm = smooth_body(sq, 0.05)
    est = hausdorff_boundary_distance(sq, sm, R=3.0)
    assert 0 < est.value < 0.05 * math.sqrt(2) + 0.05 * mollifier_first_moment(2)


def test_polygons_approach_disk():
    disk = BallBody(1.0, dim=2)
    d = []
    for m in (4, 6, 8, 12):
        body = cylindrical_approximation(regular_polygon_halfspaces(m), m, 0.2 / m)
        assert nested_on_samples(body, disk)
        d.append(hausdorff_boundary_distance(body, disk, 3.0).value)
    assert all(a > b for a, b in zip(d, d[1:]))


def test_cylindrical_approximation_errors():
    with pytest.raises(GeometryError):
        cylindrical_approximation(regular_polygon_halfspaces(4), 5, 0.05)


def test_parse_domain_kinds(tmp_path):
    assert parse_domain("interval:-1,2", 1).gauge([2.0]) == pytest.approx(1.0)
    assert parse_domain("ball:2", 3).gauge([0, 0, 1.0]) == pytest.approx(0.5)
    assert parse_domain("polygon:6", 2).inradius == pytest.approx(1.0)
    with pytest.raises(GeometryError):
        parse_domain("interval:-1,1", 2)
    with pytest.raises(GeometryError):
        parse_domain("blob:1", 2)
    p = tmp_path / "tri.body"
    p.write_text("# triangle\nhalfspace 0 -1 0.5\nhalfspace 1 1 1\nhalfspace -1 1 1\nsmooth 0.05\n")
    body = parse_domain(str(p), 2)
    assert body.gauge([0.0, 0.0]) < 1.0
    bad = tmp_path / "bad.body"
    bad.write_text("plane 1 0 1\n")
    with pytest.raises(GeometryError):
        read_body_file(bad)
    with pytest.raises(GeometryError):
        parse_domain("file:" + str(p), 1)


def test_grid_mask_is_open_set():
    g = build_grid(1, 2.0, 0.5)
    m = interval_body(-1.0, 1.0).grid_mask(g)
    assert list(g.axis[m]) == [-0.5, 0.0, 0.5]
