import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevkit import geometry
from bevkit.errors import DegenerateInput


class TestWrapAngle:
    def test_identity_in_range(self):
        assert geometry.wrap_angle(0.5) == 0.5

    def test_pi_maps_to_pi(self):
        assert geometry.wrap_angle(math.pi) == math.pi
        assert geometry.wrap_angle(-math.pi) == math.pi

    def test_wraps_past_pi(self):
        assert geometry.wrap_angle(math.pi + 0.2) == pytest.approx(-math.pi + 0.2)
        assert geometry.wrap_angle(7 * math.pi) == pytest.approx(math.pi)

    @given(st.floats(-50.0, 50.0))
    @settings(max_examples=200, deadline=None)
    def test_range_property(self, theta):
        r = geometry.wrap_angle(theta)
        assert -math.pi < r <= math.pi
        # wrapped angle is congruent mod 2*pi
        assert math.isclose(math.sin(r), math.sin(theta), abs_tol=1e-9)
        assert math.isclose(math.cos(r), math.cos(theta), abs_tol=1e-9)


class TestNetAngleChange:
    def test_no_wrap(self):
        assert geometry.net_angle_change([0.0, 0.5, 1.0]) == pytest.approx(1.0)

    def test_across_pi(self):
        # crossing the +/-pi seam must not produce a 2*pi jump:
        # steps are +0.08 and +0.07
        angles = [math.pi - 0.1, math.pi - 0.02, -math.pi + 0.05]
        assert geometry.net_angle_change(angles) == pytest.approx(0.15, abs=1e-9)


class TestResample:
    def test_two_point_line(self):
        out = geometry.resample_polyline_xy([(0, 0), (10, 0)], 3)
        assert np.allclose(out, [(0, 0), (5, 0), (10, 0)])

    def test_l_shape_hand_arclengths(self):
        # total length 8, five points at arclengths {0, 2, 4, 6, 8}
        out = geometry.resample_polyline_xy([(0, 0), (4, 0), (4, 4)], 5)
        assert np.allclose(out, [(0, 0), (2, 0), (4, 0), (4, 2), (4, 4)])

    def test_identity_on_uniform(self):
        pts = np.column_stack([np.linspace(0, 9, 10), np.zeros(10)])
        out = geometry.resample_polyline_xy(pts, 10)
        assert np.allclose(out, pts, atol=1e-9)

    def test_zero_length_raises(self):
        with pytest.raises(DegenerateInput):
            geometry.resample_polyline_xy([(1, 1), (1, 1)], 4)

    def test_too_few_output_points(self):
        with pytest.raises(DegenerateInput):
            geometry.resample_polyline_xy([(0, 0), (1, 0)], 1)

    @staticmethod
    def _walk_to_arclength(arr, s):
        """Independent oracle: walk segments accumulating length until s."""
        remaining = s
        for a, b in zip(arr[:-1], arr[1:]):
            seg = math.hypot(b[0] - a[0], b[1] - a[1])
            if seg >= remaining:
                if seg == 0.0:
                    return a
                t = remaining / seg
                return (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
            remaining -= seg
        return tuple(arr[-1])

    @given(
        st.lists(
            st.tuples(st.floats(-100, 100), st.floats(-100, 100)),
            min_size=2,
            max_size=12,
        ),
        st.integers(2, 40),
    )
    @settings(max_examples=120, deadline=None)
    def test_points_sit_at_even_arclengths(self, pts, n):
        arr = np.asarray(pts, dtype=float)
        total = geometry.polyline_length(arr)
        if total <= 1e-6:
            return
        out = geometry.resample_polyline_xy(arr, n)
        assert np.array_equal(out[0], arr[0])
        assert np.array_equal(out[-1], arr[-1])
        for i in range(n):
            expected = self._walk_to_arclength(arr, total * i / (n - 1))
            assert math.hypot(out[i][0] - expected[0], out[i][1] - expected[1]) <= 1e-6 * max(1.0, total)


def _raycast_oracle(px, py, poly):
    """Plain even-odd crossing test, written independently of the library."""
    inside = False
    n = len(poly)
    j = n - 1
    for i in range(n):
        xi, yi = poly[i]
        xj, yj = poly[j]
        if (yi > py) != (yj > py) and px < (xj - xi) * (py - yi) / (yj - yi) + xi:
            inside = not inside
        j = i
    return inside


class TestPointInPolygon:
    def test_square_inside_outside(self):
        square = [(0, 0), (4, 0), (4, 4), (0, 4)]
        assert geometry.point_in_polygon((2, 2), square)
        assert not geometry.point_in_polygon((5, 2), square)

    def test_boundary_inclusive(self):
        square = [(0, 0), (4, 0), (4, 4), (0, 4)]
        assert geometry.point_in_polygon((4, 2), square)
        assert geometry.point_in_polygon((0, 0), square)

    def test_concave_polygon_vs_oracle(self, rng):
        poly = [(0, 0), (10, 0), (10, 10), (5, 5), (0, 10)]
        pts = rng.uniform(-2, 12, size=(1000, 2))
        got = geometry.points_in_polygon(pts, poly)
        expected = [_raycast_oracle(x, y, poly) for x, y in pts]
        assert list(got) == expected

    def test_random_convex_vs_oracle(self, rng):
        for _ in range(20):
            ang = np.sort(rng.uniform(0, 2 * math.pi, size=8))
            r = rng.uniform(2, 8)
            poly = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
            pts = rng.uniform(-10, 10, size=(200, 2))
            got = geometry.points_in_polygon(pts, poly)
            expected = [_raycast_oracle(x, y, poly) for x, y in pts]
            assert list(got) == expected


class TestPolygonShape:
    def test_signed_area_ccw(self):
        assert geometry.signed_area([(0, 0), (2, 0), (2, 2), (0, 2)]) == pytest.approx(4.0)
        assert geometry.signed_area([(0, 0), (0, 2), (2, 2), (2, 0)]) == pytest.approx(-4.0)

    def test_ensure_ccw_flips(self):
        cw = [(0, 0), (0, 2), (2, 2), (2, 0)]
        assert geometry.is_ccw(geometry.ensure_ccw(cw))

    def test_simple_polygon(self):
        assert geometry.polygon_is_simple([(0, 0), (4, 0), (4, 4), (0, 4)])

    def test_bowtie_not_simple(self):
        assert not geometry.polygon_is_simple([(0, 0), (4, 4), (4, 0), (0, 4)])

    def test_polygons_intersect(self):
        a = [(0, 0), (4, 0), (4, 4), (0, 4)]
        assert geometry.polygons_intersect(a, [(2, 2), (6, 2), (6, 6), (2, 6)])
        assert not geometry.polygons_intersect(a, [(10, 10), (12, 10), (12, 12), (10, 12)])
        # containment without edge crossings
        assert geometry.polygons_intersect(a, [(1, 1), (2, 1), (2, 2), (1, 2)])


class TestClip:
    def test_fully_inside(self):
        poly = [(1, 1), (3, 1), (3, 3), (1, 3)]
        out = geometry.clip_polygon_to_box(poly, 0, 0, 4, 4)
        assert geometry.signed_area(out) == pytest.approx(4.0)

    def test_partial_overlap(self):
        poly = [(-2, 1), (2, 1), (2, 3), (-2, 3)]
        out = geometry.clip_polygon_to_box(poly, 0, 0, 4, 4)
        assert out[:, 0].min() == pytest.approx(0.0)
        assert geometry.signed_area(out) == pytest.approx(4.0)

    def test_outside_empty(self):
        poly = [(10, 10), (12, 10), (12, 12), (10, 12)]
        out = geometry.clip_polygon_to_box(poly, 0, 0, 4, 4)
        assert len(out) == 0


class TestProjection:
    def test_project_on_segment(self):
        pts = np.array([(0.0, 0.0), (10.0, 0.0)])
        cum = geometry.polyline_cumlen(pts)
        s, dist, tang = geometry.project_to_polyline(pts, cum, np.array([3.0, 4.0]))
        assert s == pytest.approx(3.0)
        assert dist == pytest.approx(4.0)
        assert tang == pytest.approx(0.0)

    def test_point_at_arclength_interpolates(self):
        pts = np.array([(0.0, 0.0), (4.0, 0.0), (4.0, 4.0)])
        cum = geometry.polyline_cumlen(pts)
        p, tang = geometry.point_at_arclength(pts, cum, 6.0)
        assert np.allclose(p, (4.0, 2.0))
        assert tang == pytest.approx(math.pi / 2)
