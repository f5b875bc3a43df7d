"""Domain predicates, distances, areas, and unit-volume rescaling."""
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from speclab.geometry import (
    Disk,
    GeometryError,
    Polygon,
    Rectangle,
    domain_from_config,
    l_shape,
)
from speclab.spectral import rectangle_spectrum

SQUARE = Rectangle(1.0, 1.0)


class TestContains:
    def test_square_center_inside(self):
        assert SQUARE.contains((0.5, 0.5))

    def test_square_boundary_point_excluded(self):
        assert not SQUARE.contains((0.0, 0.5))

    def test_disk_corner_point_outside(self):
        # ||(0.9, 0.9)|| = 1.273 > 1
        assert not Disk(1.0).contains((0.9, 0.9))

    def test_polygon_even_odd_membership(self):
        tri = Polygon(((0.0, 0.0), (1.0, 0.0), (0.0, 1.0)))
        assert tri.contains((0.25, 0.25))
        assert not tri.contains((0.75, 0.75))


class TestBoundaryDistance:
    def test_square_center(self):
        assert SQUARE.boundary_distance((0.5, 0.5)) == pytest.approx(0.5)

    def test_square_near_edge(self):
        assert SQUARE.boundary_distance((0.1, 0.4)) == pytest.approx(0.1)

    def test_disk_radial(self):
        assert Disk(2.0).boundary_distance((1.0, 0.0)) == pytest.approx(1.0)

    def test_outside_point_rejected(self):
        with pytest.raises(GeometryError):
            SQUARE.boundary_distance((1.5, 0.5))

    @given(
        x=st.floats(min_value=1e-9, max_value=1.0 - 1e-9),
        y=st.floats(min_value=1e-9, max_value=1.0 - 1e-9),
        lx=st.floats(min_value=0.1, max_value=10.0),
        ly=st.floats(min_value=0.1, max_value=10.0),
    )
    def test_rectangle_closed_form(self, x, y, lx, ly):
        px, py = x * lx, y * ly
        r = Rectangle(lx, ly)
        if not r.contains((px, py)):
            return
        want = min(px, lx - px, py, ly - py)
        assert r.boundary_distance((px, py)) == pytest.approx(want, abs=1e-12)

    @given(
        x=st.floats(min_value=-0.5, max_value=1.5),
        y=st.floats(min_value=-0.5, max_value=1.5),
    )
    def test_positive_distance_iff_contained(self, x, y):
        p = (x, y)
        if SQUARE.contains(p):
            assert SQUARE.boundary_distance(p) > 0.0
        else:
            with pytest.raises(GeometryError):
                SQUARE.boundary_distance(p)


class TestVolumePerimeter:
    def test_rectangle_area(self):
        assert Rectangle(2.0, 3.0).volume() == pytest.approx(6.0, rel=1e-12)

    def test_disk_area(self):
        assert Disk(1.5).volume() == pytest.approx(math.pi * 2.25, rel=1e-12)

    def test_l_shape_area(self):
        assert l_shape(1.0).volume() == pytest.approx(0.75, rel=1e-12)

    def test_rectangle_perimeter(self):
        assert Rectangle(2.0, 3.0).perimeter() == pytest.approx(10.0)

    def test_disk_perimeter(self):
        assert Disk(2.0).perimeter() == pytest.approx(4.0 * math.pi)

    def test_l_shape_perimeter(self):
        assert l_shape(1.0).perimeter() == pytest.approx(4.0)

    def test_invalid_dimensions_rejected(self):
        with pytest.raises(GeometryError):
            Rectangle(0.0, 1.0)
        with pytest.raises(GeometryError):
            Disk(-1.0)
        with pytest.raises(GeometryError):
            Polygon(((0, 0), (1, 0)))


class TestRescale:
    def test_rectangle_two_by_two(self):
        d, factor = Rectangle(2.0, 2.0).rescale_to_unit_volume()
        assert factor == pytest.approx(0.5)
        assert (d.lx, d.ly) == (1.0, 1.0)

    def test_unit_square_identity(self):
        d, factor = SQUARE.rescale_to_unit_volume()
        assert factor == pytest.approx(1.0)
        assert d.volume() == pytest.approx(1.0, rel=1e-12)

    def test_disk_factor(self):
        d, factor = Disk(1.0).rescale_to_unit_volume()
        assert factor == pytest.approx(1.0 / math.sqrt(math.pi))
        assert d.volume() == pytest.approx(1.0, rel=1e-12)

    def test_polygon_rescale(self):
        d, factor = l_shape(2.0).rescale_to_unit_volume()
        assert d.volume() == pytest.approx(1.0, rel=1e-12)
        assert factor == pytest.approx(1.0 / math.sqrt(3.0))

    def test_frequencies_scale_inversely_with_factor(self):
        # Shrinking a domain by c multiplies every frequency by 1/c.
        big = Rectangle(2.0, 2.0)
        unit, factor = big.rescale_to_unit_volume()
        lam_big = rectangle_spectrum(big.lx, big.ly, 12.0).lambdas
        lam_unit = rectangle_spectrum(unit.lx, unit.ly, 12.0 / factor).lambdas
        np.testing.assert_allclose(lam_big / factor, lam_unit[: len(lam_big)], rtol=1e-12)


class TestConfigConstruction:
    def test_rectangle_from_config(self):
        d = domain_from_config({"kind": "rectangle", "lx": 2.0, "ly": 1.0})
        assert isinstance(d, Rectangle) and d.lx == 2.0

    def test_disk_from_config(self):
        d = domain_from_config({"kind": "disk", "r": 0.5})
        assert isinstance(d, Disk) and d.r == 0.5

    def test_l_shape_from_config(self):
        d = domain_from_config({"kind": "l-shape", "size": 1.0})
        assert d.volume() == pytest.approx(0.75)

    def test_unknown_kind_rejected(self):
        with pytest.raises(GeometryError):
            domain_from_config({"kind": "torus"})
