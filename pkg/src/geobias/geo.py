"""Planar geometry for the study area.

Geographic coordinates are mapped to kilometres with a spherical azimuthal
equidistant projection centred on the study area. All downstream distances
(kernel radii, variogram lags, skyglow attenuation) are Euclidean distances in
that plane.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon

EARTH_RADIUS_KM = 6371.0088

__all__ = [
    "EARTH_RADIUS_KM",
    "GeoPoint",
    "PlanarPoint",
    "ProjectionSpec",
    "Grid",
    "GridCell",
    "GeometryError",
    "project",
    "inverse_project",
    "project_lonlat",
    "inverse_project_xy",
    "distance_km",
    "as_polygon",
    "build_grid",
    "point_to_cell",
    "points_to_cells",
]


class GeometryError(ValueError):
    """Raised for invalid coordinates or degenerate geometries."""


class GeoPoint(NamedTuple):
    lon: float
    lat: float

    def validate(self) -> "GeoPoint":
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise GeometryError(f"non-finite coordinate {self}")
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise GeometryError(f"coordinate out of range {self}")
        return self


class PlanarPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class ProjectionSpec:
    """Azimuthal equidistant projection on a sphere of radius ``radius_km``."""

    origin: GeoPoint
    radius_km: float = EARTH_RADIUS_KM
    kind: str = "azimuthal-equidistant"

    def __post_init__(self):
        GeoPoint(*self.origin).validate()
        object.__setattr__(self, "origin", GeoPoint(*self.origin))


def project_lonlat(lon, lat, spec: ProjectionSpec):
    """Vectorised forward projection; returns ``(x_km, y_km)`` arrays."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if not (np.all(np.isfinite(lon)) and np.all(np.isfinite(lat))):
        raise GeometryError("non-finite longitude/latitude")
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise GeometryError("longitude/latitude out of range")

    lam0 = math.radians(spec.origin.lon)
    phi0 = math.radians(spec.origin.lat)
    lam = np.radians(lon)
    phi = np.radians(lat)
    dlam = lam - lam0

    sin_phi, cos_phi = np.sin(phi), np.cos(phi)
    sin_phi0, cos_phi0 = math.sin(phi0), math.cos(phi0)
    cos_dlam = np.cos(dlam)

    # haversine form keeps small angular distances accurate
    hav = np.sin((phi - phi0) / 2.0) ** 2 + cos_phi0 * cos_phi * np.sin(dlam / 2.0) ** 2
    c = 2.0 * np.arcsin(np.sqrt(np.clip(hav, 0.0, 1.0)))
    if np.any(c > math.pi - 1e-9):
        raise GeometryError("point is antipodal to the projection origin")

    sin_c = np.sin(c)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(c > 0.0, c / np.where(sin_c == 0.0, 1.0, sin_c), 1.0)
    x = spec.radius_km * k * cos_phi * np.sin(dlam)
    y = spec.radius_km * k * (cos_phi0 * sin_phi - sin_phi0 * cos_phi * cos_dlam)
    return x, y


def inverse_project_xy(x, y, spec: ProjectionSpec):
    """Vectorised inverse projection; returns ``(lon, lat)`` arrays in degrees."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise GeometryError("non-finite planar coordinate")

    lam0 = math.radians(spec.origin.lon)
    phi0 = math.radians(spec.origin.lat)
    sin_phi0, cos_phi0 = math.sin(phi0), math.cos(phi0)

    rho = np.hypot(x, y)
    c = rho / spec.radius_km
    sin_c, cos_c = np.sin(c), np.cos(c)
    safe_rho = np.where(rho == 0.0, 1.0, rho)
    sin_phi = cos_c * sin_phi0 + np.where(rho == 0.0, 0.0, y * sin_c * cos_phi0 / safe_rho)
    phi = np.arcsin(np.clip(sin_phi, -1.0, 1.0))
    lam = lam0 + np.arctan2(x * sin_c, rho * cos_phi0 * cos_c - y * sin_phi0 * sin_c)
    lon = (np.degrees(lam) + 180.0) % 360.0 - 180.0
    lat = np.degrees(phi)
    lon = np.where(rho == 0.0, spec.origin.lon, lon)
    lat = np.where(rho == 0.0, spec.origin.lat, lat)
    return lon, lat


def project(p: GeoPoint, spec: ProjectionSpec) -> PlanarPoint:
    p = GeoPoint(*p).validate()
    x, y = project_lonlat(p.lon, p.lat, spec)
    return PlanarPoint(float(x), float(y))


def inverse_project(p: PlanarPoint, spec: ProjectionSpec) -> GeoPoint:
    lon, lat = inverse_project_xy(p[0], p[1], spec)
    return GeoPoint(float(lon), float(lat))


def distance_km(a, b) -> float:
    """Euclidean distance between two planar points, in km."""
    return math.hypot(float(a[0]) - float(b[0]), float(a[1]) - float(b[1]))


def as_polygon(boundary) -> Polygon:
    """Coerce ``boundary`` to a valid shapely polygon.

    Accepts a shapely Polygon or a sequence of ``(x, y)`` exterior vertices.
    """
    if isinstance(boundary, Polygon):
        poly = boundary
    else:
        coords = np.asarray(boundary, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise GeometryError("boundary must be a sequence of (x, y) vertices")
        poly = Polygon(coords)
    exterior = np.asarray(poly.exterior.coords)
    if len(np.unique(exterior, axis=0)) < 3:
        raise GeometryError("polygon needs at least 3 distinct vertices")
    if not poly.is_valid:
        raise GeometryError(f"invalid polygon: {shapely.is_valid_reason(poly)}")
    if poly.area <= 0.0:
        raise GeometryError("degenerate polygon with zero area")
    return poly


@dataclass(frozen=True)
class GridCell:
    index: int
    center: PlanarPoint
    covariates: Optional[np.ndarray] = None
    prediction: Optional[float] = None
    prediction_variance: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Grid:
    """Regular square lattice of prediction cells.

    Cells are stored column-wise in arrays; ``rows``/``cols`` give the lattice
    position of each cell relative to ``origin`` (the lower-left corner of the
    boundary's bounding box). Use :meth:`replace` style helpers to attach
    covariates or predictions, the grid itself is never mutated.
    """

    cell_size_km: float
    origin: PlanarPoint
    rows: np.ndarray
    cols: np.ndarray
    projection: Optional[ProjectionSpec] = None
    covariates: Optional[np.ndarray] = None
    covariate_names: tuple = ()
    prediction: Optional[np.ndarray] = None
    prediction_variance: Optional[np.ndarray] = None
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.cell_size_km > 0:
            raise GeometryError("cell_size_km must be positive")
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "origin", PlanarPoint(*map(float, self.origin)))
        lookup = {(int(r), int(c)): i for i, (r, c) in enumerate(zip(rows, cols))}
        if len(lookup) != len(rows):
            raise GeometryError("grid cells overlap")
        object.__setattr__(self, "_lookup", lookup)
        if self.covariates is not None:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != len(rows) or cov.shape[1] != len(self.covariate_names):
                raise ValueError("covariates must be (n_cells, n_covariate_names)")
            object.__setattr__(self, "covariates", cov)
            object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        for name in ("prediction", "prediction_variance"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != (len(rows),):
                    raise ValueError(f"{name} must have one value per cell")
                object.__setattr__(self, name, arr)
        if self.prediction_variance is not None and np.any(self.prediction_variance < 0):
            raise ValueError("prediction_variance must be non-negative")

    def __len__(self):
        return len(self.rows)

    @property
    def n_cells(self) -> int:
        return len(self.rows)

    @property
    def centers(self) -> np.ndarray:
        s = self.cell_size_km
        x = self.origin.x + (self.cols + 0.5) * s
        y = self.origin.y + (self.rows + 0.5) * s
        return np.column_stack([x, y])

    @property
    def cells(self) -> list[GridCell]:
        centers = self.centers
        out = []
        for i in range(self.n_cells):
            out.append(GridCell(
                index=i,
                center=PlanarPoint(*centers[i]),
                covariates=None if self.covariates is None else self.covariates[i],
                prediction=None if self.prediction is None else float(self.prediction[i]),
                prediction_variance=(None if self.prediction_variance is None
                                     else float(self.prediction_variance[i])),
            ))
        return out

    def lonlat(self) -> np.ndarray:
        if self.projection is None:
            raise GeometryError("grid has no projection attached")
        c = self.centers
        lon, lat = inverse_project_xy(c[:, 0], c[:, 1], self.projection)
        return np.column_stack([lon, lat])

    def cell_polygon(self, i: int) -> np.ndarray:
        s = self.cell_size_km
        x0 = self.origin.x + self.cols[i] * s
        y0 = self.origin.y + self.rows[i] * s
        return np.array([[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s], [x0, y0]])

    def index_of(self, row: int, col: int) -> Optional[int]:
        return self._lookup.get((int(row), int(col)))

    def covariate(self, name: str) -> np.ndarray:
        if self.covariates is None:
            raise KeyError(name)
        return self.covariates[:, self.covariate_names.index(name)]

    def with_covariates(self, covariates, names) -> "Grid":
        return replace(self, covariates=covariates, covariate_names=tuple(names), _lookup=None)

    def with_predictions(self, prediction, variance) -> "Grid":
        return replace(self, prediction=prediction, prediction_variance=variance, _lookup=None)


def build_grid(boundary, cell_size_km: float = 5.0,
               projection: Optional[ProjectionSpec] = None) -> Grid:
    """Lay a square lattice over ``boundary`` and keep cells centred inside it.

    The lattice is anchored at the lower-left corner of the boundary's
    bounding box. Cells are indexed in row-major order, rows running
    south to north and columns west to east.
    """
    if not cell_size_km > 0:
        raise GeometryError("cell_size_km must be positive")
    poly = as_polygon(boundary)
    xmin, ymin, xmax, ymax = poly.bounds
    s = float(cell_size_km)
    ncols = max(1, int(math.ceil((xmax - xmin) / s)))
    nrows = max(1, int(math.ceil((ymax - ymin) / s)))
    rr, cc = np.meshgrid(np.arange(nrows), np.arange(ncols), indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    cx = xmin + (cc + 0.5) * s
    cy = ymin + (rr + 0.5) * s
    inside = shapely.contains_xy(poly, cx, cy)
    if not inside.any():
        warnings.warn("boundary contains no cell centre; grid is empty", stacklevel=2)
    return Grid(cell_size_km=s, origin=PlanarPoint(xmin, ymin),
                rows=rr[inside], cols=cc[inside], projection=projection)


def points_to_cells(grid: Grid, points) -> np.ndarray:
    """Vectorised :func:`point_to_cell`; ``-1`` marks points outside the grid."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    s = grid.cell_size_km
    cols = np.floor((pts[:, 0] - grid.origin.x) / s).astype(np.int64)
    rows = np.floor((pts[:, 1] - grid.origin.y) / s).astype(np.int64)
    out = np.full(len(pts), -1, dtype=np.int64)
    for k, (r, c) in enumerate(zip(rows, cols)):
        idx = grid._lookup.get((int(r), int(c)))
        if idx is not None:
            out[k] = idx
    return out


def point_to_cell(grid: Grid, p) -> Optional[int]:
    """Index of the cell whose half-open square ``[x0, x0+s) x [y0, y0+s)`` holds ``p``."""
    idx = int(points_to_cells(grid, [p])[0])
    return None if idx < 0 else idx
