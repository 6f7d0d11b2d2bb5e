import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rism.grids import (
    OBSERVED,
    UNOBSERVED,
    CartesianGrid,
    LabelSet,
    PolarScan,
    build_polar_cart_map,
    cell_centers,
    polar_mask_to_cart,
    resample_polar_to_cart,
    resample_polar_to_cart_backward,
    rotate_pair,
)


def brute_force_resample(polar, range_resolution, height, width, cell_size):
    """Per-cell scalar bilinear interpolation, written independently of the map."""
    n_az, n_r = polar.shape
    out = np.zeros((height, width))
    for u in range(height):
        for v in range(width):
            x = (v - width / 2) * cell_size
            y = (height / 2 - u) * cell_size
            r = math.hypot(x, y) / range_resolution
            if r > n_r - 1 + 1e-9:
                continue
            theta = math.atan2(y, x) % (2 * math.pi)
            a = theta * n_az / (2 * math.pi)
            a0 = int(math.floor(a))
            fa = a - a0
            r0 = min(int(math.floor(r)), n_r - 1)
            fr = min(max(r - r0, 0.0), 1.0)
            r1 = min(r0 + 1, n_r - 1)
            a0m, a1m = a0 % n_az, (a0 + 1) % n_az
            out[u, v] = (
                (1 - fa) * (1 - fr) * polar[a0m, r0]
                + (1 - fa) * fr * polar[a0m, r1]
                + fa * (1 - fr) * polar[a1m, r0]
                + fa * fr * polar[a1m, r1]
            )
    return out


class TestRasterTypes:
    def test_polar_scan_properties(self):
        scan = PolarScan(np.ones((8, 16)), 0.5)
        assert scan.num_azimuths == 8
        assert scan.num_range_bins == 16
        assert scan.power.dtype == np.float32
        assert scan.max_range == pytest.approx(7.5)

    @pytest.mark.parametrize(
        "power",
        [-np.ones((8, 8)), np.full((8, 8), np.nan), np.full((8, 8), np.inf), np.ones((3, 8)), np.ones((8, 3))],
    )
    def test_polar_scan_rejects_bad_power(self, power):
        with pytest.raises(ValueError):
            PolarScan(power, 0.2)

    def test_cartesian_grid_requires_even_dims(self):
        CartesianGrid(np.zeros((4, 6)), 0.3)
        with pytest.raises(ValueError):
            CartesianGrid(np.zeros((5, 6)), 0.3)
        with pytest.raises(ValueError):
            CartesianGrid(np.zeros((4, 6)), 0.0)

    def test_label_set_validation(self):
        LabelSet(np.zeros((4, 4)), np.full((4, 4), 2))
        with pytest.raises(ValueError):
            LabelSet(np.zeros((4, 4)), np.zeros((4, 5)))
        with pytest.raises(ValueError):
            LabelSet(np.full((4, 4), 2), np.zeros((4, 4)))
        with pytest.raises(ValueError):
            LabelSet(np.zeros((4, 4)), np.full((4, 4), 3))

    def test_cell_centres_put_sensor_on_centre_cell(self):
        x, y = cell_centers(8, 6, 0.5)
        assert x[4, 3] == 0.0 and y[4, 3] == 0.0
        assert x[4, 4] == 0.5 and y[3, 3] == 0.5


class TestBuildMap:
    def test_rejects_non_positive_dims(self):
        for args in [(0, 8, 0.2, 8, 8, 0.3), (8, 8, 0.0, 8, 8, 0.3), (8, 8, 0.2, 8, -2, 0.3)]:
            with pytest.raises(ValueError):
                build_polar_cart_map(*args)

    def test_axis_aligned_cell_hits_one_bin(self):
        # cs = dr, so the cell k steps along +x sits exactly at range bin k, azimuth 0.
        pmap = build_polar_cart_map(8, 16, 0.5, 16, 16, 0.5)
        for k in range(1, 8):
            cell = 8 * 16 + (8 + k)
            w = pmap.weights[cell]
            idx = pmap.indices[cell]
            assert w.max() == pytest.approx(1.0)
            assert idx[np.argmax(w)] == 0 * 16 + k

    def test_centre_cell_maps_to_range_zero(self):
        pmap = build_polar_cart_map(8, 16, 0.5, 16, 16, 0.5)
        cell = 8 * 16 + 8
        assert pmap.range_coord[cell] == 0.0
        r_idx = pmap.indices[cell] % 16
        np.testing.assert_array_equal(r_idx[pmap.weights[cell] > 0], 0)

    def test_bisecting_bearing_splits_azimuth_evenly(self):
        # Theta = 8 has bins at multiples of 45 deg; the 22.5 deg bearing bisects bins 0 and 1.
        n_az, n_r, dr, h, w, cs = 8, 64, 0.1, 64, 64, 0.1
        pmap = build_polar_cart_map(n_az, n_r, dr, h, w, cs)
        x, y = cell_centers(h, w, cs)
        bearing = np.degrees(np.arctan2(y, x)).ravel()
        for cell in np.flatnonzero(pmap.in_range):
            direct = (bearing[cell] % 360) / 45.0
            assert pmap.azimuth_coord[cell] == pytest.approx(direct % n_az, abs=1e-9)
            frac = direct - math.floor(direct)
            wa1 = pmap.weights[cell, 2] + pmap.weights[cell, 3]
            assert wa1 == pytest.approx(frac, abs=1e-9)

    def test_weights_are_convex_in_range_and_zero_outside(self):
        pmap = build_polar_cart_map(64, 128, 0.2, 128, 128, 0.3)
        sums = pmap.weights.sum(axis=1)
        assert np.all(pmap.weights >= 0)
        np.testing.assert_allclose(sums[pmap.in_range], 1.0, atol=1e-6)
        np.testing.assert_array_equal(sums[~pmap.in_range], 0.0)
        assert (~pmap.in_range).any()

    def test_azimuth_wraps_at_seam(self):
        pmap = build_polar_cart_map(8, 16, 0.5, 16, 16, 0.5)
        az = pmap.indices // 16
        assert az.max() < 8
        # A cell just below +x (bearing near 2pi) interpolates between the last bin and bin 0.
        cell = 9 * 16 + 14
        used = set(az[cell][pmap.weights[cell] > 0])
        assert used == {7, 0}


class TestResample:
    @pytest.fixture(scope="class")
    @classmethod
    def pmap(cls):
        return build_polar_cart_map(8, 16, 0.25, 12, 12, 0.4)

    def test_matches_brute_force(self, pmap):
        polar = np.random.default_rng(3).random((8, 16))
        expected = brute_force_resample(polar, 0.25, 12, 12, 0.4)
        np.testing.assert_allclose(resample_polar_to_cart(pmap, polar), expected, atol=1e-12)

    def test_constant_field(self, pmap):
        out = resample_polar_to_cart(pmap, np.full((8, 16), 2.5))
        inside = pmap.in_range.reshape(12, 12)
        np.testing.assert_allclose(out[inside], 2.5, rtol=1e-6)
        np.testing.assert_array_equal(out[~inside], 0.0)

    def test_one_hot_bounded_and_local(self, pmap):
        polar = np.zeros((8, 16))
        polar[3, 5] = 1.0
        out = resample_polar_to_cart(pmap, polar).ravel()
        touches = (pmap.indices == 3 * 16 + 5) & (pmap.weights > 0)
        assert np.all(out <= 1.0)
        np.testing.assert_array_equal(out > 0, touches.any(axis=1))

    def test_batch_axes_and_dtype(self, pmap):
        polar = np.random.default_rng(0).random((2, 3, 8, 16)).astype(np.float32)
        out = resample_polar_to_cart(pmap, polar)
        assert out.shape == (2, 3, 12, 12) and out.dtype == np.float32
        np.testing.assert_allclose(out[1, 2], resample_polar_to_cart(pmap, polar[1, 2]), rtol=1e-6)

    def test_shape_mismatch(self, pmap):
        with pytest.raises(ValueError):
            resample_polar_to_cart(pmap, np.zeros((8, 15)))
        with pytest.raises(ValueError):
            resample_polar_to_cart_backward(pmap, np.zeros((12, 11)))

    def test_backward_of_zero_is_zero(self, pmap):
        np.testing.assert_array_equal(resample_polar_to_cart_backward(pmap, np.zeros((12, 12))), 0.0)

    def test_backward_single_cell_scatters_its_weights(self, pmap):
        cell = int(np.flatnonzero(pmap.in_range)[17])
        g = np.zeros(12 * 12)
        g[cell] = 1.0
        back = resample_polar_to_cart_backward(pmap, g.reshape(12, 12)).ravel()
        expected = np.zeros(8 * 16)
        np.add.at(expected, pmap.indices[cell], pmap.weights[cell])
        np.testing.assert_allclose(back, expected, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_linear_and_adjoint(self, pmap, seed, a, b):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, 8, 16))
        g = rng.standard_normal((12, 12))
        lhs = resample_polar_to_cart(pmap, a * x + b * y)
        rhs = a * resample_polar_to_cart(pmap, x) + b * resample_polar_to_cart(pmap, y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)
        inner_cart = np.sum(resample_polar_to_cart(pmap, x) * g)
        inner_polar = np.sum(x * resample_polar_to_cart_backward(pmap, g))
        assert inner_cart == pytest.approx(inner_polar, rel=1e-5, abs=1e-9)

    def test_mask_lookup_uses_nearest_bin(self, pmap):
        mask = np.zeros((8, 16), dtype=bool)
        mask[0, 4] = True
        out = polar_mask_to_cart(pmap, mask)
        near = pmap.nearest_indices
        np.testing.assert_array_equal(out, near == 4)
        assert not out[~pmap.in_range.reshape(12, 12)].any()


class TestRotatePair:
    @pytest.fixture
    def pair(self):
        rng = np.random.default_rng(5)
        scan = PolarScan(rng.random((16, 8)), 0.5)
        occ = (rng.random((32, 32)) < 0.1).astype(np.uint8)
        obs = rng.integers(0, 3, (32, 32)).astype(np.uint8)
        return scan, LabelSet(occ, obs)

    def test_zero_is_identity(self, pair):
        scan, labels = pair
        s2, l2 = rotate_pair(scan, labels, 0)
        np.testing.assert_array_equal(s2.power, scan.power)
        np.testing.assert_array_equal(l2.occupancy, labels.occupancy)

    def test_quarter_turns_compose_to_identity_on_scan(self, pair):
        scan, labels = pair
        s, lab = scan, labels
        for _ in range(4):
            s, lab = rotate_pair(s, lab, 4)
        np.testing.assert_array_equal(s.power, scan.power)

    def test_shift_then_complement_is_identity(self, pair):
        scan, labels = pair
        for k in range(16):
            s, _ = rotate_pair(*rotate_pair(scan, labels, k), 16 - k)
            np.testing.assert_array_equal(s.power, scan.power)

    def test_angle_normalised(self, pair):
        scan, labels = pair
        a, _ = rotate_pair(scan, labels, 3)
        b, _ = rotate_pair(scan, labels, 3 + 16)
        np.testing.assert_array_equal(a.power, b.power)
        np.testing.assert_array_equal(a.power, np.roll(scan.power, 3, axis=0))

    def test_half_turn_point_reflects_labels(self):
        # Direct coordinate oracle: cell offset (dx, dy) from the sensor lands at (-dx, -dy).
        occ = np.zeros((32, 32), dtype=np.uint8)
        pts = [(3, 5), (-7, 2), (10, -4), (-1, -1)]
        for dx, dy in pts:
            occ[16 - dy, 16 + dx] = 1
        obs = np.full((32, 32), OBSERVED, dtype=np.uint8)
        _, lab = rotate_pair(PolarScan(np.ones((16, 8)), 0.5), LabelSet(occ, obs), 8)
        expected = np.zeros_like(occ)
        for dx, dy in pts:
            expected[16 + dy, 16 - dx] = 1
        np.testing.assert_array_equal(lab.occupancy, expected)

    def test_quarter_turn_counter_clockwise(self):
        occ = np.zeros((32, 32), dtype=np.uint8)
        occ[16, 16 + 6] = 1  # on +x
        obs = np.full((32, 32), OBSERVED, dtype=np.uint8)
        _, lab = rotate_pair(PolarScan(np.ones((16, 8)), 0.5), LabelSet(occ, obs), 4)
        assert lab.occupancy[16 - 6, 16] == 1  # now on +y
        assert lab.occupancy.sum() == 1

    def test_half_turn_keeps_occupied_count(self, pair):
        scan, labels = pair
        inner = labels.occupancy.copy()
        inner[:2], inner[:, :2] = 0, 0  # cells whose mirror falls off the grid
        _, lab = rotate_pair(scan, LabelSet(inner, labels.observability), 8)
        assert abs(int(lab.occupancy.sum()) - int(inner.sum())) <= 0.05 * inner.sum()

    def test_off_grid_fills_unobserved(self, pair):
        scan, labels = pair
        _, lab = rotate_pair(scan, LabelSet(labels.occupancy, np.full((32, 32), OBSERVED)), 2)
        corner = lab.observability[0, 0]
        assert corner == UNOBSERVED
