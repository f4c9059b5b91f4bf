import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from spatcal.core import (HourlyPanel, Location, SiteRegistry, coords,
                          pairwise_distances, project)


class TestProject:
    def test_reference_maps_to_origin(self):
        loc = project(121.5, 25.0, 121.5, 25.0)
        assert loc.x == 0.0 and loc.y == 0.0

    def test_one_degree_north(self):
        loc = project(121.5, 26.0, 121.5, 25.0)
        assert_allclose(loc.y, 110.57)
        assert_allclose(loc.x, 0.0)

    def test_two_km_neighborhood_scale(self):
        # 0.018 degrees of latitude is about the 2 km neighborhood radius
        a = project(121.5, 25.0, 121.5, 25.0)
        b = project(121.5, 25.018, 121.5, 25.0)
        d = np.hypot(a.x - b.x, a.y - b.y)
        assert_allclose(d, 2.0, atol=0.02)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            project(float("nan"), 25.0, 121.5, 25.0)
        with pytest.raises(ValueError):
            project(121.5, float("inf"), 121.5, 25.0)

    def test_rejects_polar_latitude(self):
        with pytest.raises(ValueError):
            project(0.0, 90.0, 0.0, 0.0)

    @settings(max_examples=100)
    @given(lon1=st.floats(119, 124), lat1=st.floats(22, 27),
           lon2=st.floats(119, 124), lat2=st.floats(22, 27))
    def test_injective_on_window(self, lon1, lat1, lon2, lat2):
        # distinct inputs separated by >= 1e-4 degrees stay >= 1 m apart
        if abs(lon1 - lon2) < 1e-4 and abs(lat1 - lat2) < 1e-4:
            return
        a = project(lon1, lat1, 121.5, 24.5)
        b = project(lon2, lat2, 121.5, 24.5)
        assert np.hypot(a.x - b.x, a.y - b.y) >= 1e-3


class TestPairwiseDistances:
    def test_single_point_zero(self):
        a = [Location(1.0, 2.0, "a")]
        assert pairwise_distances(a, a) == np.array([[0.0]])

    def test_three_four_five(self):
        d = pairwise_distances([Location(0, 0)], [Location(3, 4)])
        assert_allclose(d, [[5.0]])

    def test_symmetric_sets(self):
        rng = np.random.default_rng(0)
        xy = rng.uniform(0, 100, (20, 2))
        D = pairwise_distances(xy, xy)
        assert_allclose(D, D.T)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            pairwise_distances(np.zeros((0, 2)), np.zeros((3, 2)))

    @settings(max_examples=50)
    @given(st.integers(2, 15), st.integers(0, 2**32 - 1))
    def test_symmetry_zero_diagonal_random(self, n, seed):
        xy = np.random.default_rng(seed).uniform(-50, 50, (n, 2))
        D = pairwise_distances(xy, xy)
        assert_allclose(D, D.T, atol=1e-12)
        assert_allclose(np.diag(D), 0.0, atol=1e-12)

    def test_triangle_inequality_spot(self):
        xy = np.random.default_rng(3).uniform(0, 10, (8, 2))
        D = pairwise_distances(xy, xy)
        for i in range(8):
            for j in range(8):
                for k in range(8):
                    assert D[i, j] <= D[i, k] + D[k, j] + 1e-9


class TestTypes:
    def test_registry_rejects_duplicate_ids(self):
        with pytest.raises(ValueError):
            SiteRegistry(ids=("a", "a"), xy=np.zeros((2, 2)))

    def test_registry_immutable(self):
        reg = SiteRegistry(ids=("a", "b"), xy=np.arange(4.0).reshape(2, 2))
        with pytest.raises(ValueError):
            reg.xy[0, 0] = 9.0

    def test_panel_shape_mismatch(self):
        with pytest.raises(ValueError):
            HourlyPanel(t=0, airbox_values=np.zeros(3), airbox_present=np.ones(2, bool),
                        epa_values=np.zeros(1), epa_present=np.ones(1, bool))

    def test_panel_rejects_nan_present_value(self):
        with pytest.raises(ValueError):
            HourlyPanel(t=0, airbox_values=np.array([np.nan]),
                        airbox_present=np.array([True]),
                        epa_values=np.zeros(1), epa_present=np.ones(1, bool))

    def test_panel_counts(self):
        p = HourlyPanel(t=5, airbox_values=np.array([1.0, np.nan, 3.0]),
                        airbox_present=np.array([True, False, True]),
                        epa_values=np.array([2.0]), epa_present=np.array([True]))
        assert p.n_airbox == 2 and p.n_epa == 1

    def test_coords_from_locations(self):
        got = coords([Location(1, 2, "a"), Location(3, 4, "b")])
        assert_allclose(got, [[1, 2], [3, 4]])
