import json
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from geobias.geo import GeoPoint, ProjectionSpec, build_grid
from geobias.io import (
    IngestError,
    IngestWarning,
    Observation,
    PolylineSet,
    Raster,
    read_boundary,
    read_grid,
    read_observations,
    read_polylines,
    read_raster,
    write_grid,
    write_observations,
    write_polylines,
    write_raster,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_observation_row_parses(tmp_path):
    p = _write(tmp_path / "o.csv", "lat,lon,brightness\n40.0,-77.5,3\n")
    (o,) = read_observations(p)
    assert o == Observation(GeoPoint(-77.5, 40.0), 3)


def test_out_of_range_rows_rejected_and_counted(tmp_path):
    p = _write(tmp_path / "o.csv",
               "lat,lon,brightness,date\n40,-77,9,x\n40,-77,2,2020-01-05\n95,-77,1,\n40,-77,2.5,\n"
               "nan,-77,1,\n40,-77,,\n")
    with pytest.warns(IngestWarning, match="rejected 5 of 6"):
        obs, rej = read_observations(p, return_rejected=True)
    assert [o.brightness for o in obs] == [2]
    assert obs[0].date == "2020-01-05"
    assert [line for line, _ in rej] == [2, 4, 5, 6, 7]


def test_missing_column_named(tmp_path):
    p = _write(tmp_path / "o.csv", "lat,lon,mag\n40,-77,3\n")
    with pytest.raises(IngestError, match="brightness"):
        read_observations(p)


def test_observation_round_trip(tmp_path):
    obs = [Observation(GeoPoint(-77.123456789, 40.987654321), 4, "2020-02-01"),
           Observation(GeoPoint(-76.0, 41.0), 0)]
    write_observations(obs, tmp_path / "o.csv")
    assert read_observations(tmp_path / "o.csv") == obs


@settings(max_examples=60, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.binary(max_size=300))
def test_observation_reader_is_total(tmp_path, blob):
    p = tmp_path / "fuzz.csv"
    p.write_bytes(blob)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            read_observations(p)
        except IngestError:
            pass


def _fc(*geoms, props=None):
    return json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": props or {}, "geometry": g} for g in geoms]})


def test_linestring_and_multilinestring(tmp_path):
    p = _write(tmp_path / "l.geojson", _fc(
        {"type": "LineString", "coordinates": [[-77, 40], [-76.9, 40.1]]},
        {"type": "MultiLineString", "coordinates": [[[-77, 41], [-77, 41.1]],
                                                    [[-76, 41], [-76, 41.1]],
                                                    [[-75, 41], [-75, 41.1], [-75.1, 41.2]]]},
        props={"highway": "motorway"}))
    ls = read_polylines(p)
    assert len(ls) == 4
    assert ls.tags[0] == "highway=motorway"
    write_polylines(ls, tmp_path / "w.geojson")
    again = read_polylines(tmp_path / "w.geojson")
    for a, b in zip(ls.lines, again.lines):
        np.testing.assert_array_equal(a, b)


def test_single_linestring(tmp_path):
    p = _write(tmp_path / "l.geojson", _fc({"type": "LineString", "coordinates": [[0, 0], [1, 1]]}))
    assert len(read_polylines(p)) == 1


def test_empty_feature_collection_warns(tmp_path):
    p = _write(tmp_path / "l.geojson", _fc())
    with pytest.warns(IngestWarning, match="no polylines"):
        assert len(read_polylines(p)) == 0


def test_non_line_geometries_skipped(tmp_path):
    p = _write(tmp_path / "l.geojson", _fc(
        {"type": "Point", "coordinates": [0, 0]},
        {"type": "LineString", "coordinates": [[0, 0], [1, 1]]}))
    with pytest.warns(IngestWarning, match="skipped 1"):
        assert len(read_polylines(p)) == 1


def test_malformed_geojson(tmp_path):
    p = _write(tmp_path / "l.geojson", "{not json")
    with pytest.raises(IngestError):
        read_polylines(p)


def test_raster_2x2(tmp_path):
    p = _write(tmp_path / "r.asc", "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 1\n1 1\n")
    r = read_raster(p)
    assert r.values.shape == (2, 2) and np.all(r.values == 1)


def test_raster_count_mismatch(tmp_path):
    p = _write(tmp_path / "r.asc", "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 1 1\n")
    with pytest.raises(IngestError, match="expected 4 values"):
        read_raster(p)


def test_raster_nodata_and_round_trip(tmp_path):
    text = ("NCOLS 3\nNROWS 2\nXLLCENTER 0.5\nYLLCENTER 0.5\nCELLSIZE 1\nNODATA_value -9999\n"
            "1.5 -9999 2\n3 4 5\n")
    r = read_raster(_write(tmp_path / "r.asc", text), units="km")
    assert r.xllcorner == 0.0
    np.testing.assert_array_equal(r.valid_mask, [[True, False, True], [True, True, True]])
    write_raster(r, tmp_path / "w.asc")
    r2 = read_raster(tmp_path / "w.asc", units="km")
    np.testing.assert_array_equal(r.values, r2.values)
    assert r2.nodata == -9999
    # row 0 is north
    X, Y = r.native_centers()
    assert Y[0, 0] == 1.5 and Y[1, 0] == 0.5


def test_categorical_raster_rejects_unknown_class():
    with pytest.raises(IngestError, match="undeclared"):
        Raster(np.array([[41.0, 99.0]]), 0, 0, 1, kind="categorical")


def _poly(ring):
    return {"type": "Polygon", "coordinates": [ring]}


def test_unit_square_boundary(tmp_path):
    p = _write(tmp_path / "b.geojson", _fc(_poly([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]])))
    poly, spec = read_boundary(p)
    assert len(poly.exterior.coords) == 5  # 4 vertices plus closure
    assert spec.origin.lon == pytest.approx(0.5) and spec.origin.lat == pytest.approx(0.5)


def test_mainland_kept_over_islet(tmp_path):
    main = [[-80, 40], [-75, 40], [-75, 42], [-80, 42], [-80, 40]]
    islet = [[-74, 40], [-73.9, 40], [-73.9, 40.1], [-74, 40]]
    p = _write(tmp_path / "b.geojson", _fc({"type": "MultiPolygon",
                                            "coordinates": [[islet], [main]]}))
    poly, spec = read_boundary(p)
    assert spec.origin.lon == pytest.approx(-77.5)
    assert poly.area > 5e4


def test_self_intersecting_boundary(tmp_path):
    bowtie = [[0, 0], [1, 1], [1, 0], [0, 1], [0, 0]]
    p = _write(tmp_path / "b.geojson", _fc(_poly(bowtie)))
    with pytest.raises(IngestError, match="invalid"):
        read_boundary(p)


def test_boundary_without_polygon(tmp_path):
    p = _write(tmp_path / "b.geojson", _fc({"type": "Point", "coordinates": [0, 0]}))
    with pytest.raises(IngestError):
        read_boundary(p)


def test_write_grid_two_cells_without_predictions(tmp_path):
    g = build_grid([(0, 0), (10, 0), (10, 5), (0, 5), (0, 0)], 5.0)
    write_grid(g, tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == "cell_id,x_km,y_km,lon,lat,pred,var"
    assert lines[1].endswith(",,,,")


def test_write_grid_round_trip(tmp_path, rng):
    spec = ProjectionSpec(GeoPoint(-77.0, 41.0))
    g = build_grid([(0, 0), (37, 0), (30, 22), (0, 19), (0, 0)], 2.5, projection=spec)
    cov = rng.normal(size=(g.n_cells, 2)) * 1e3
    g = g.with_covariates(cov, ("a", "b")).with_predictions(rng.normal(size=g.n_cells),
                                                            rng.uniform(0, 1, g.n_cells))
    write_grid(g, tmp_path / "g.csv", geojson_path=tmp_path / "g.geojson")
    back = read_grid(tmp_path / "g.csv", projection=spec)
    assert back.cell_size_km == pytest.approx(2.5, rel=1e-12)
    np.testing.assert_allclose(back.centers, g.centers, rtol=1e-12)
    np.testing.assert_allclose(back.prediction, g.prediction, rtol=1e-12)
    np.testing.assert_allclose(back.prediction_variance, g.prediction_variance, rtol=1e-12)
    np.testing.assert_allclose(back.covariates, cov, rtol=1e-12)
    np.testing.assert_array_equal(back.rows, g.rows)
    np.testing.assert_array_equal(back.cols, g.cols)
    doc = json.loads((tmp_path / "g.geojson").read_text())
    assert len(doc["features"]) == g.n_cells


def test_polylineset_validation():
    with pytest.raises(ValueError):
        PolylineSet(([[0, 0]],))
