"""Readers and writers for observations, polylines, boundaries, rasters and grids.

Formats
-------
observations CSV
    UTF-8, header ``lat,lon,brightness[,date]`` (any column order, extra
    columns ignored). Brightness is an integer on the 0 (bright) to 7 (dark)
    naked-eye scale.
GeoJSON
    RFC 7946 FeatureCollection, Feature or bare geometry, WGS84 lon/lat.
ESRI ASCII grid
    Header keys ``ncols nrows xllcorner|xllcenter yllcorner|yllcenter cellsize
    NODATA_value`` (case-insensitive) followed by whitespace-separated values,
    first row northernmost.
grid CSV
    ``cell_id,x_km,y_km,lon,lat,pred,var,<covariate columns>``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from shapely.geometry import MultiPolygon, Polygon, shape

from .geo import (
    EARTH_RADIUS_KM,
    GeoPoint,
    Grid,
    GeometryError,
    PlanarPoint,
    ProjectionSpec,
    as_polygon,
    inverse_project_xy,
    project_lonlat,
)

__all__ = [
    "NLCD_CLASSES",
    "IngestError",
    "IngestWarning",
    "Observation",
    "PolylineSet",
    "Raster",
    "read_observations",
    "observations_to_arrays",
    "write_observations",
    "read_polylines",
    "write_polylines",
    "read_raster",
    "write_raster",
    "read_boundary",
    "write_boundary",
    "write_grid",
    "read_grid",
    "format_float",
]

# National Land Cover Database legend, code -> label.
NLCD_CLASSES = {
    11: "Open Water",
    12: "Perennial Ice/Snow",
    21: "Developed, Open Space",
    22: "Developed, Low Intensity",
    23: "Developed, Medium Intensity",
    24: "Developed, High Intensity",
    31: "Barren Land (Rock/Sand/Clay)",
    41: "Deciduous Forest",
    42: "Evergreen Forest",
    43: "Mixed Forest",
    51: "Dwarf Scrub",
    52: "Shrub/Scrub",
    71: "Grassland/Herbaceous",
    72: "Sedge/Herbaceous",
    73: "Lichens",
    74: "Moss",
    81: "Pasture/Hay",
    82: "Cultivated Crops",
    90: "Woody Wetlands",
    95: "Emergent Herbaceous Wetlands",
}

BRIGHTNESS_MIN, BRIGHTNESS_MAX = 0, 7


class IngestError(ValueError):
    """A file could not be parsed into the requested structure."""


class IngestWarning(UserWarning):
    pass


def format_float(v) -> str:
    """Shortest repr that round-trips; empty string for missing values."""
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8-sig")
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path}: not valid UTF-8 ({exc.reason})") from exc
    except OSError as exc:
        raise IngestError(f"{path}: {exc.strerror or exc}") from exc


# --------------------------------------------------------------------------
# observations

@dataclass(frozen=True)
class Observation:
    location: GeoPoint
    brightness: int
    date: Optional[str] = None

    def __post_init__(self):
        if not BRIGHTNESS_MIN <= self.brightness <= BRIGHTNESS_MAX:
            raise ValueError(f"brightness {self.brightness} outside 0-7")


def _parse_brightness(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"brightness {text!r} is not an integer")
    v = int(v)
    if not BRIGHTNESS_MIN <= v <= BRIGHTNESS_MAX:
        raise ValueError(f"brightness {v} outside {BRIGHTNESS_MIN}-{BRIGHTNESS_MAX}")
    return v


def read_observations(path, *, return_rejected: bool = False):
    """Read the observations CSV.

    Rows with unparseable coordinates or brightness outside 0-7 are
    rejected; one :class:`IngestWarning` reports the count.

    Returns
    -------
    list of Observation
        Accepted rows in file order. With ``return_rejected=True`` a tuple
        ``(observations, rejected)`` where ``rejected`` lists
        ``(line_number, reason)``.
    """
    text = _read_text(path)
    try:
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path}: empty file, expected header lat,lon,brightness")
        cols = {name.strip().lower(): i for i, name in enumerate(header)}
        for required in ("lat", "lon", "brightness"):
            if required not in cols:
                raise IngestError(f"{path}: missing column '{required}'")
        i_lat, i_lon, i_b = cols["lat"], cols["lon"], cols["brightness"]
        i_date = cols.get("date")

        obs, rejected = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                lat = float(row[i_lat])
                lon = float(row[i_lon])
                loc = GeoPoint(lon, lat).validate()
                b = _parse_brightness(row[i_b])
            except (ValueError, IndexError, GeometryError) as exc:
                rejected.append((lineno, str(exc)))
                continue
            date = row[i_date].strip() if i_date is not None and i_date < len(row) else None
            obs.append(Observation(loc, b, date or None))
    except csv.Error as exc:
        raise IngestError(f"{path}: malformed CSV ({exc})") from exc

    if rejected:
        warnings.warn(f"{path}: rejected {len(rejected)} of {len(obs) + len(rejected)} rows",
                      IngestWarning, stacklevel=2)
    if return_rejected:
        return obs, rejected
    return obs


def observations_to_arrays(obs: Sequence[Observation]):
    """Return ``(lonlat (n, 2), brightness (n,))`` arrays."""
    lonlat = np.array([[o.location.lon, o.location.lat] for o in obs], dtype=float).reshape(-1, 2)
    values = np.array([o.brightness for o in obs], dtype=float)
    return lonlat, values


def write_observations(obs: Sequence[Observation], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lat", "lon", "brightness", "date"])
        for o in obs:
            w.writerow([format_float(o.location.lat), format_float(o.location.lon),
                        o.brightness, o.date or ""])


# --------------------------------------------------------------------------
# GeoJSON

def _load_geojson(path) -> list[dict]:
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict) or "type" not in doc:
        raise IngestError(f"{path}: not a GeoJSON object")
    kind = doc["type"]
    if kind == "FeatureCollection":
        feats = doc.get("features")
        if not isinstance(feats, list):
            raise IngestError(f"{path}: FeatureCollection without a features list")
        return [f for f in feats if isinstance(f, dict)]
    if kind == "Feature":
        return [doc]
    return [{"type": "Feature", "geometry": doc, "properties": {}}]


def _tag_string(props) -> str:
    if not isinstance(props, dict):
        return ""
    return ";".join(f"{k}={props[k]}" for k in sorted(props) if props[k] is not None)


@dataclass(frozen=True)
class PolylineSet:
    """Polylines in geographic coordinates; each line is an ``(m, 2)`` lon/lat array."""

    lines: tuple = ()
    tags: tuple = ()

    def __post_init__(self):
        lines = tuple(np.asarray(l, dtype=float).reshape(-1, 2) for l in self.lines)
        tags = tuple(self.tags) if self.tags else ("",) * len(lines)
        if len(tags) != len(lines):
            raise ValueError("one tag string per line required")
        for l in lines:
            if len(l) < 2:
                raise ValueError("each polyline needs at least 2 vertices")
        object.__setattr__(self, "lines", lines)
        object.__setattr__(self, "tags", tags)

    def __len__(self):
        return len(self.lines)

    def to_planar(self, spec: ProjectionSpec) -> list[np.ndarray]:
        out = []
        for l in self.lines:
            x, y = project_lonlat(l[:, 0], l[:, 1], spec)
            out.append(np.column_stack([x, y]))
        return out


def read_polylines(path) -> PolylineSet:
    """Read LineString/MultiLineString features; other geometries are skipped."""
    feats = _load_geojson(path)
    lines, tags, skipped = [], [], 0
    for f in feats:
        geom = f.get("geometry") or {}
        kind = geom.get("type")
        tag = _tag_string(f.get("properties"))
        if kind == "LineString":
            parts = [geom.get("coordinates")]
        elif kind == "MultiLineString":
            parts = geom.get("coordinates") or []
        else:
            skipped += 1
            continue
        for part in parts:
            try:
                arr = np.asarray(part, dtype=float)[:, :2]
                for lon, lat in arr:
                    GeoPoint(lon, lat).validate()
            except (TypeError, ValueError, IndexError, GeometryError):
                skipped += 1
                continue
            if len(arr) < 2:
                skipped += 1
                continue
            lines.append(arr)
            tags.append(tag)
    if skipped:
        warnings.warn(f"{path}: skipped {skipped} non-line or invalid geometries",
                      IngestWarning, stacklevel=2)
    if not lines:
        warnings.warn(f"{path}: no polylines found", IngestWarning, stacklevel=2)
    return PolylineSet(tuple(lines), tuple(tags))


def write_polylines(lines: PolylineSet, path) -> None:
    feats = []
    for l, tag in zip(lines.lines, lines.tags):
        props = dict(kv.split("=", 1) for kv in tag.split(";") if "=" in kv)
        feats.append({"type": "Feature", "properties": props,
                      "geometry": {"type": "LineString", "coordinates": l.tolist()}})
    Path(path).write_text(json.dumps({"type": "FeatureCollection", "features": feats}) + "\n",
                          encoding="utf-8")


def read_boundary(path, projection: Optional[ProjectionSpec] = None):
    """Read the study boundary and project it to the planar frame.

    The largest polygon (by geographic area) among all Polygon/MultiPolygon
    parts is kept. Unless ``projection`` is given, the projection is
    centred on that polygon's centroid.

    Returns
    -------
    (shapely.geometry.Polygon, ProjectionSpec)
    """
    feats = _load_geojson(path)
    candidates = []
    for f in feats:
        geom = f.get("geometry")
        if not isinstance(geom, dict) or geom.get("type") not in ("Polygon", "MultiPolygon"):
            continue
        try:
            g = shape(geom)
        except Exception as exc:  # shapely raises assorted types on bad coordinates
            raise IngestError(f"{path}: unreadable polygon ({exc})") from exc
        candidates.extend(g.geoms if isinstance(g, MultiPolygon) else [g])
    if not candidates:
        raise IngestError(f"{path}: no Polygon or MultiPolygon feature")

    def geo_area(p):
        # area with a cos(latitude) correction, good enough to rank parts
        return p.area * math.cos(math.radians(p.centroid.y)) if not p.is_empty else 0.0

    poly = max(candidates, key=geo_area)
    if not poly.is_valid:
        raise IngestError(f"{path}: invalid boundary polygon (self-intersecting ring?)")
    if projection is None:
        c = poly.centroid
        projection = ProjectionSpec(GeoPoint(c.x, c.y))

    def proj_ring(ring):
        xy = np.asarray(ring.coords)[:, :2]
        x, y = project_lonlat(xy[:, 0], xy[:, 1], projection)
        return np.column_stack([x, y])

    planar = Polygon(proj_ring(poly.exterior), [proj_ring(r) for r in poly.interiors])
    try:
        return as_polygon(planar), projection
    except GeometryError as exc:
        raise IngestError(f"{path}: {exc}") from exc


def write_boundary(polygon_lonlat, path) -> None:
    coords = np.asarray(polygon_lonlat, dtype=float).tolist()
    doc = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {},
         "geometry": {"type": "Polygon", "coordinates": [coords]}}]}
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# rasters

@dataclass(frozen=True, eq=False)
class Raster:
    """A georeferenced regular grid.

    ``values`` has shape ``(nrows, ncols)`` with row 0 the northernmost row,
    as in the ESRI ASCII layout. ``units`` is ``"deg"`` when the corner and
    cell size are geographic degrees and ``"km"`` when they are already in
    the planar projection frame.
    """

    values: np.ndarray
    xllcorner: float
    yllcorner: float
    cellsize: float
    nodata: Optional[float] = None
    kind: str = "continuous"
    units: str = "deg"
    classes: Optional[tuple] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.size == 0:
            raise IngestError("raster values must be a non-empty 2-D array")
        if not (self.cellsize > 0 and math.isfinite(self.cellsize)):
            raise IngestError(f"cellsize must be positive, got {self.cellsize}")
        if self.kind not in ("categorical", "continuous"):
            raise ValueError(f"unknown raster kind {self.kind!r}")
        if self.units not in ("deg", "km"):
            raise ValueError(f"unknown raster units {self.units!r}")
        object.__setattr__(self, "values", vals)
        if self.kind == "categorical":
            classes = tuple(NLCD_CLASSES) if self.classes is None else tuple(self.classes)
            object.__setattr__(self, "classes", classes)
            found = np.unique(vals[self.valid_mask])
            unknown = sorted(set(found.tolist()) - set(float(c) for c in classes))
            if unknown:
                raise IngestError(f"categorical raster holds undeclared classes {unknown[:10]}")

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        mask = np.isfinite(self.values)
        if self.nodata is not None:
            mask &= self.values != self.nodata
        return mask

    def native_centers(self):
        """Pixel-centre coordinates in the raster's own units, each ``(nrows, ncols)``."""
        cols = np.arange(self.ncols)
        rows = np.arange(self.nrows)
        x = self.xllcorner + (cols + 0.5) * self.cellsize
        y = self.yllcorner + (self.nrows - rows - 0.5) * self.cellsize
        return np.meshgrid(x, y)

    def planar_centers(self, projection: Optional[ProjectionSpec]) -> np.ndarray:
        """Pixel centres in km, ``(nrows * ncols, 2)`` in row-major order."""
        key = ("centers", projection)
        if key not in self._cache:
            X, Y = self.native_centers()
            if self.units == "deg":
                if projection is None:
                    raise GeometryError("degree raster needs a projection")
                x, y = project_lonlat(X.ravel(), Y.ravel(), projection)
                self._cache[key] = np.column_stack([x, y])
            else:
                self._cache[key] = np.column_stack([X.ravel(), Y.ravel()])
        return self._cache[key]

    def pixel_areas_km2(self) -> np.ndarray:
        """Per-pixel area in km², ``(nrows * ncols,)`` in row-major order."""
        if self.units == "km":
            return np.full(self.nrows * self.ncols, self.cellsize ** 2)
        _, Y = self.native_centers()
        d = math.radians(self.cellsize)
        area = EARTH_RADIUS_KM ** 2 * d * d * np.cos(np.radians(Y))
        return area.ravel()


def read_raster(path, kind: str = "continuous", units: str = "deg",
                classes: Optional[Sequence[int]] = None) -> Raster:
    """Parse an ESRI ASCII grid file."""
    text = _read_text(path)
    tokens = text.split()
    header = {}
    pos = 0
    keys = {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
            "cellsize", "nodata_value"}
    while pos + 1 < len(tokens) and tokens[pos].lower() in keys:
        header[tokens[pos].lower()] = tokens[pos + 1]
        pos += 2
    for k in ("ncols", "nrows", "cellsize"):
        if k not in header:
            raise IngestError(f"{path}: header key '{k}' missing")
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        cellsize = float(header["cellsize"])
        nodata = float(header["nodata_value"]) if "nodata_value" in header else None
        if "xllcorner" in header:
            xll = float(header["xllcorner"])
        elif "xllcenter" in header:
            xll = float(header["xllcenter"]) - cellsize / 2
        else:
            raise IngestError(f"{path}: header key 'xllcorner' missing")
        if "yllcorner" in header:
            yll = float(header["yllcorner"])
        elif "yllcenter" in header:
            yll = float(header["yllcenter"]) - cellsize / 2
        else:
            raise IngestError(f"{path}: header key 'yllcorner' missing")
    except ValueError as exc:
        raise IngestError(f"{path}: bad header value ({exc})") from exc
    if ncols <= 0 or nrows <= 0:
        raise IngestError(f"{path}: ncols/nrows must be positive")
    if not cellsize > 0:
        raise IngestError(f"{path}: cellsize must be positive, got {cellsize}")
    body = tokens[pos:]
    if len(body) != ncols * nrows:
        raise IngestError(f"{path}: expected {ncols * nrows} values for {nrows}x{ncols}, "
                          f"found {len(body)}")
    try:
        values = np.array(body, dtype=float).reshape(nrows, ncols)
    except ValueError as exc:
        raise IngestError(f"{path}: non-numeric raster value ({exc})") from exc
    return Raster(values, xll, yll, cellsize, nodata, kind=kind, units=units,
                  classes=tuple(classes) if classes is not None else None)


def write_raster(raster: Raster, path) -> None:
    lines = [
        f"ncols {raster.ncols}",
        f"nrows {raster.nrows}",
        f"xllcorner {format_float(raster.xllcorner)}",
        f"yllcorner {format_float(raster.yllcorner)}",
        f"cellsize {format_float(raster.cellsize)}",
    ]
    if raster.nodata is not None:
        lines.append(f"NODATA_value {format_float(raster.nodata)}")
    integral = np.all(raster.values == np.round(raster.values))
    for row in raster.values:
        if integral:
            lines.append(" ".join(str(int(v)) for v in row))
        else:
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# grids

GRID_BASE_COLUMNS = ["cell_id", "x_km", "y_km", "lon", "lat", "pred", "var"]


def write_grid(grid: Grid, path, geojson_path=None) -> None:
    """Write one CSV row per cell, ordered by cell index."""
    centers = grid.centers
    lonlat = grid.lonlat() if grid.projection is not None else None
    names = list(grid.covariate_names)
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"{path}: cannot write ({exc.strerror or exc})") from exc
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_BASE_COLUMNS + names)
        for i in range(grid.n_cells):
            row = [i, format_float(centers[i, 0]), format_float(centers[i, 1])]
            row += ([format_float(lonlat[i, 0]), format_float(lonlat[i, 1])]
                    if lonlat is not None else ["", ""])
            row.append(format_float(grid.prediction[i]) if grid.prediction is not None else "")
            row.append(format_float(grid.prediction_variance[i])
                       if grid.prediction_variance is not None else "")
            if grid.covariates is not None:
                row += [format_float(v) for v in grid.covariates[i]]
            w.writerow(row)
    if geojson_path is not None:
        _write_grid_geojson(grid, geojson_path)


def _write_grid_geojson(grid: Grid, path) -> None:
    if grid.projection is None:
        raise GeometryError("GeoJSON output needs a projection to produce lon/lat")
    feats = []
    for i in range(grid.n_cells):
        ring = grid.cell_polygon(i)
        lon, lat = inverse_project_xy(ring[:, 0], ring[:, 1], grid.projection)
        props = {"cell_id": i}
        if grid.prediction is not None:
            props["pred"] = None if np.isnan(grid.prediction[i]) else float(grid.prediction[i])
        if grid.prediction_variance is not None:
            v = grid.prediction_variance[i]
            props["var"] = None if np.isnan(v) else float(v)
        feats.append({"type": "Feature", "properties": props, "geometry": {
            "type": "Polygon",
            "coordinates": [[[float(a), float(b)] for a, b in zip(lon, lat)]]}})
    Path(path).write_text(json.dumps({"type": "FeatureCollection", "features": feats}) + "\n",
                          encoding="utf-8")


def read_grid(path, cell_size_km: Optional[float] = None,
              projection: Optional[ProjectionSpec] = None) -> Grid:
    """Read a grid CSV written by :func:`write_grid`.

    ``cell_size_km`` is inferred from the centre spacing when omitted, which
    requires at least two cells sharing a row or column.
    """
    text = _read_text(path)
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or header[:len(GRID_BASE_COLUMNS)] != GRID_BASE_COLUMNS:
        raise IngestError(f"{path}: not a grid CSV (expected columns {GRID_BASE_COLUMNS})")
    names = header[len(GRID_BASE_COLUMNS):]

    def num(s):
        return float(s) if s != "" else np.nan

    try:
        rows = [r for r in reader if r]
        ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
        xy = np.array([[float(r[1]), float(r[2])] for r in rows], dtype=float).reshape(-1, 2)
        pred = np.array([num(r[5]) for r in rows], dtype=float)
        var = np.array([num(r[6]) for r in rows], dtype=float)
        cov = np.array([[num(v) for v in r[len(GRID_BASE_COLUMNS):]] for r in rows],
                       dtype=float).reshape(len(rows), len(names))
    except (ValueError, IndexError) as exc:
        raise IngestError(f"{path}: bad grid row ({exc})") from exc
    if not np.array_equal(ids, np.arange(len(ids))):
        raise IngestError(f"{path}: cell ids must be 0..n-1 in order")

    if cell_size_km is None:
        spacings = []
        for axis in (0, 1):
            u = np.unique(xy[:, axis])
            if len(u) > 1:
                spacings.append(np.min(np.diff(u)))
        if not spacings:
            raise IngestError(f"{path}: cannot infer cell size, pass cell_size_km")
        cell_size_km = float(min(spacings))
    s = float(cell_size_km)
    origin = xy.min(axis=0) - s / 2 if len(xy) else np.zeros(2)
    cols = np.rint((xy[:, 0] - origin[0]) / s - 0.5).astype(np.int64)
    rws = np.rint((xy[:, 1] - origin[1]) / s - 0.5).astype(np.int64)
    has_pred = len(pred) > 0 and not np.all(np.isnan(pred))
    has_var = len(var) > 0 and not np.all(np.isnan(var))
    return Grid(
        cell_size_km=s,
        origin=PlanarPoint(*origin),
        rows=rws,
        cols=cols,
        projection=projection,
        covariates=cov if names else None,
        covariate_names=tuple(names),
        prediction=pred if has_pred else None,
        prediction_variance=var if has_var else None,
    )
