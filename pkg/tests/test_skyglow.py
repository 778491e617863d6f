import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geobias.geo import build_grid
from geobias.io import Raster
from geobias.metrics import spearman
from geobias.skyglow import (
    SkyglowParams,
    SkyglowWarning,
    log_skyglow,
    radiance_sources,
    walker_skyglow,
)

UNIT_CELL = build_grid([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5)], 1.0)


def _pixel(cx, cy, value=1.0, size=1.0):
    return Raster(np.array([[value]]), cx - size / 2, cy - size / 2, size, units="km")


def test_single_pixel_at_10_km():
    (s,) = walker_skyglow(_pixel(10.0, 0.0), UNIT_CELL)
    assert abs(s - 10 ** -2.5) <= 1e-12 * 10 ** -2.5
    (s2,) = walker_skyglow(_pixel(10.0, 0.0, 1.0, 0.5), UNIT_CELL, aggregate=False)
    assert abs(s2 - 0.25 * 10 ** -2.5) <= 1e-12


def test_clamp_inside_min_distance():
    for d in (0.0, 0.3, 0.999):
        (s,) = walker_skyglow(_pixel(d, 0.0), UNIT_CELL)
        assert s == 1.0


def test_two_pixels_add():
    r = Raster(np.array([[2.0, 0.0, 0.0, 3.0]]), 4.5, -0.5, 1.0, units="km")
    (s,) = walker_skyglow(r, UNIT_CELL)
    want = 2.0 * 5.0 ** -2.5 + 3.0 * 8.0 ** -2.5
    assert s == pytest.approx(want, rel=1e-12)


def test_cutoff_and_missing_cells():
    with pytest.warns(SkyglowWarning, match="no radiance"):
        (s,) = walker_skyglow(_pixel(150.0, 0.0), UNIT_CELL)
    assert math.isnan(s)


def test_negative_radiance_clamped():
    r = Raster(np.array([[-5.0, 1.0]]), 9.5, -0.5, 1.0, units="km")
    with pytest.warns(SkyglowWarning, match="clamped"):
        (s,) = walker_skyglow(r, UNIT_CELL)
    assert s == pytest.approx(11.0 ** -2.5, rel=1e-12)


def test_nodata_skipped():
    r = Raster(np.array([[-1.0, 1.0]]), 9.5, -0.5, 1.0, nodata=-1.0, units="km")
    (s,) = walker_skyglow(r, UNIT_CELL)
    assert s == pytest.approx(11.0 ** -2.5, rel=1e-12)


def test_fine_pixels_aggregated_preserve_power():
    vals = np.arange(1.0, 17.0).reshape(4, 4)
    r = Raster(vals, 20.0, 0.0, 0.25, units="km")
    pos, power = radiance_sources(r)
    assert len(pos) == 1
    assert power.sum() == pytest.approx(vals.sum() * 0.0625, rel=1e-14)
    np.testing.assert_allclose(pos[0], [20.5, 0.5])


def test_params_validation():
    with pytest.raises(ValueError):
        SkyglowParams(exponent=0)
    with pytest.raises(ValueError):
        SkyglowParams(min_distance_km=200)


GRID = build_grid([(0, 0), (40, 0), (40, 30), (0, 30), (0, 0)], 5.0)


def _random_raster(rng, scale=1.0):
    return Raster(rng.uniform(0, 50, (30, 40)) * scale, -10.0, -10.0, 1.5, units="km")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100.0))
def test_linearity(seed, c):
    rng = np.random.default_rng(seed)
    r = _random_raster(rng)
    base = walker_skyglow(r, GRID)
    scaled = walker_skyglow(Raster(r.values * c, r.xllcorner, r.yllcorner, r.cellsize,
                                   units="km"), GRID)
    np.testing.assert_allclose(scaled, c * base, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_monotonicity(seed):
    rng = np.random.default_rng(seed)
    r = _random_raster(rng)
    extra = np.where(rng.uniform(size=r.values.shape) < 0.1, rng.uniform(0, 100, r.values.shape), 0)
    more = Raster(r.values + extra, r.xllcorner, r.yllcorner, r.cellsize, units="km")
    assert np.all(walker_skyglow(more, GRID) >= walker_skyglow(r, GRID))


def test_single_source_smoothing():
    line = build_grid([(0, 0), (60, 0), (60, 1), (0, 1), (0, 0)], 1.0)
    s = walker_skyglow(_pixel(0.5, 0.5), line)
    assert np.all(np.diff(s[1:]) < 0)


def test_rank_invariance_under_log(rng):
    r = _random_raster(rng)
    s = walker_skyglow(r, GRID)
    other = rng.normal(size=GRID.n_cells)
    assert spearman(other, s) == spearman(other, log_skyglow(s))


def test_log_skyglow():
    assert log_skyglow([1.0])[0] == 0.0
    assert log_skyglow([math.e])[0] == 1.0
    v = np.array([0.3, 5.0, 2.0])
    assert np.array_equal(np.argsort(log_skyglow(v)), np.argsort(v))
    assert math.isnan(log_skyglow([np.nan])[0])
    with pytest.raises(ValueError, match="cell 1"):
        log_skyglow([1.0, 0.0])


def test_threads_do_not_change_output(scenario):
    a = walker_skyglow(scenario.radiance, scenario.grid, n_jobs=1)
    b = walker_skyglow(scenario.radiance, scenario.grid, n_jobs=4)
    assert a.tobytes() == b.tobytes()
