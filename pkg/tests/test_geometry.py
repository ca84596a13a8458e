import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfiscan.geometry import (
    ArrayGeometry,
    Direction,
    equivalent_distance,
    steering_element,
    steering_vector,
)

HALF_WAVE = ArrayGeometry(4, 3, 0.5, 0.5, 1.0)

angles = st.floats(-math.pi / 2, math.pi / 2, allow_nan=False)
geometries = st.builds(
    ArrayGeometry,
    n_y=st.integers(1, 5),
    n_z=st.integers(1, 5),
    d_y=st.floats(0.05, 0.5),
    d_z=st.floats(0.05, 0.5),
    wavelength=st.just(1.0),
)


class TestValidation:
    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            ArrayGeometry(0, 3, 0.5, 0.5, 1.0)

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            ArrayGeometry(2, 2, -0.1, 0.5, 1.0)

    def test_wide_spacing_warns_but_builds(self):
        with pytest.warns(UserWarning):
            geom = ArrayGeometry(2, 2, 0.9, 0.5, 1.0)
        assert geom.n_elements == 4

    def test_direction_range(self):
        with pytest.raises(ValueError):
            Direction(2.0, 0.0)
        with pytest.raises(ValueError):
            Direction(0.0, math.nan)

    def test_index_bounds(self):
        with pytest.raises(IndexError):
            equivalent_distance(HALF_WAVE, 4, 0, Direction(0, 0))
        with pytest.raises(IndexError):
            equivalent_distance(HALF_WAVE, 0, -1, Direction(0, 0))


class TestEquivalentDistance:
    def test_origin_element_is_zero(self):
        assert equivalent_distance(HALF_WAVE, 0, 0, Direction(0.7, -0.3)) == 0.0

    def test_broadside_is_zero(self):
        assert equivalent_distance(HALF_WAVE, 3, 2, Direction(0.0, 0.0)) == 0.0

    def test_endfire_unit_cell(self):
        # cos(0) * sin(pi/2) = 1, so the distance is just d_y + 0
        d = equivalent_distance(HALF_WAVE, 1, 1, Direction(math.pi / 2, 0.0))
        assert d == pytest.approx(0.5, abs=1e-15)


class TestSteeringElement:
    def test_origin_is_unity(self):
        assert steering_element(HALF_WAVE, 0, 0, Direction(0.4, 0.2)) == 1 + 0j

    def test_broadside_is_unity(self):
        for n in range(HALF_WAVE.n_y):
            for m in range(HALF_WAVE.n_z):
                assert steering_element(HALF_WAVE, n, m, Direction(0, 0)) == 1 + 0j

    def test_half_wave_endfire_phase(self):
        val = steering_element(HALF_WAVE, 1, 0, Direction(math.pi / 2, 0.0))
        assert val == pytest.approx(-1 + 0j, abs=1e-12)


class TestSteeringVector:
    def test_broadside_all_ones(self):
        a = steering_vector(HALF_WAVE, Direction(0, 0))
        np.testing.assert_allclose(a, np.ones(HALF_WAVE.n_elements))

    def test_single_element(self):
        geom = ArrayGeometry(1, 1, 0.5, 0.5, 1.0)
        np.testing.assert_array_equal(steering_vector(geom, Direction(0.3, 0.1)), [1.0])

    def test_two_element_quarter_phase(self):
        geom = ArrayGeometry(2, 1, 0.5, 0.5, 1.0)
        a = steering_vector(geom, Direction(math.pi / 6, 0.0))
        np.testing.assert_allclose(a, [1.0, 1j], atol=1e-12)

    def test_matches_elementwise_construction(self):
        direction = Direction(0.5, -0.4)
        a = steering_vector(HALF_WAVE, direction)
        for n in range(HALF_WAVE.n_y):
            for m in range(HALF_WAVE.n_z):
                idx = HALF_WAVE.element_index(n, m)
                assert a[idx] == pytest.approx(
                    steering_element(HALF_WAVE, n, m, direction), abs=1e-12
                )

    @settings(max_examples=60, deadline=None)
    @given(geometries, angles, angles)
    def test_unit_modulus(self, geom, az, el):
        a = steering_vector(geom, Direction(az, el))
        np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(geometries, angles, angles)
    def test_conjugate_symmetry(self, geom, az, el):
        forward = steering_vector(geom, Direction(az, el))
        mirrored = steering_vector(geom, Direction(-az, -el))
        np.testing.assert_allclose(mirrored, forward.conj(), atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(geometries, angles, angles)
    def test_kronecker_structure(self, geom, az, el):
        direction = Direction(az, el)
        a = steering_vector(geom, direction)
        line_y = ArrayGeometry(geom.n_y, 1, geom.d_y, geom.d_z, geom.wavelength)
        line_z = ArrayGeometry(1, geom.n_z, geom.d_y, geom.d_z, geom.wavelength)
        a_y = steering_vector(line_y, direction)
        a_z = steering_vector(line_z, direction)
        np.testing.assert_allclose(a, np.kron(a_y, a_z), atol=1e-12)
