"""Geospatial covariates for points and grid cells.

Two covariate families are computed around each location:

* motorway density: Gaussian-kernel weighted motorway length, one value per
  kernel radius (the radius is the kernel standard deviation);
* land-cover proportions: the share of each land-cover class among raster
  pixels whose centres fall in a circular zone of fixed area.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._utils import check_points, check_values, chunked, parallel_map
from .geo import Grid, ProjectionSpec, points_to_cells
from .io import PolylineSet, Raster

__all__ = [
    "KernelConfig",
    "ZonalConfig",
    "ZonalError",
    "EnrichmentWarning",
    "LineSamples",
    "CovariateTable",
    "sample_lines",
    "kernel_line_density",
    "landcover_proportions",
    "enrich_points",
    "aggregate_to_cells",
    "CovariateEnricher",
    "motorway_column",
    "landcover_column",
]


class ZonalError(ValueError):
    """The zone around a location holds no valid land-cover pixel."""


class EnrichmentWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KernelConfig:
    radii_km: tuple = (1.0, 10.0, 25.0)
    truncation_factor: float = 3.0
    line_sample_step_km: float = 0.1

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii_km)
        if not radii or any(r <= 0 for r in radii):
            raise ValueError("kernel radii must be positive")
        if list(radii) != sorted(radii):
            raise ValueError("kernel radii must be sorted ascending")
        if not self.truncation_factor > 0:
            raise ValueError("truncation_factor must be positive")
        if not 0 < self.line_sample_step_km < radii[0]:
            raise ValueError("line_sample_step_km must be positive and below the smallest radius")
        object.__setattr__(self, "radii_km", radii)


@dataclass(frozen=True)
class ZonalConfig:
    area_km2: float = 25.0
    shape: str = "circle"

    def __post_init__(self):
        if not self.area_km2 > 0:
            raise ValueError("area_km2 must be positive")
        if self.shape != "circle":
            raise ValueError("only circular zones are supported")

    @property
    def radius_km(self) -> float:
        return math.sqrt(self.area_km2 / math.pi)


def motorway_column(radius_km: float) -> str:
    return f"motorway_{radius_km:g}km"


def landcover_column(code) -> str:
    return f"lc_{int(code)}" if float(code).is_integer() else f"lc_{code}"


# --------------------------------------------------------------------------
# line kernel

@dataclass(frozen=True, eq=False)
class LineSamples:
    """Midpoints and lengths of the pieces lines are split into."""

    points: np.ndarray
    lengths: np.ndarray
    tree: Optional[cKDTree] = field(default=None, repr=False)


def sample_lines(lines: Sequence[np.ndarray], step_km: float) -> LineSamples:
    """Split every segment into equal pieces no longer than ``step_km``."""
    pts, lens = [], []
    for line in lines:
        line = np.asarray(line, dtype=float).reshape(-1, 2)
        for a, b in zip(line[:-1], line[1:]):
            seg = math.hypot(b[0] - a[0], b[1] - a[1])
            if seg == 0.0:
                continue
            n = max(1, math.ceil(seg / step_km))
            t = (np.arange(n) + 0.5) / n
            pts.append(a + t[:, None] * (b - a))
            lens.append(np.full(n, seg / n))
    if not pts:
        return LineSamples(np.empty((0, 2)), np.empty(0), None)
    points = np.vstack(pts)
    return LineSamples(points, np.concatenate(lens), cKDTree(points))


def _as_samples(lines, cfg: KernelConfig) -> LineSamples:
    if isinstance(lines, LineSamples):
        return lines
    return sample_lines(lines, cfg.line_sample_step_km)


def _density_from_candidates(samples: LineSamples, idx, center, radius, cutoff) -> float:
    if len(idx) == 0:
        return 0.0
    idx = np.sort(np.asarray(idx, dtype=np.int64))
    d2 = np.sum((samples.points[idx] - center) ** 2, axis=1)
    keep = d2 <= cutoff * cutoff
    w = samples.lengths[idx][keep] * np.exp(-d2[keep] / (2.0 * radius * radius))
    return math.fsum(w.tolist())


def kernel_line_density(lines, center, radius_km: float,
                        cfg: Optional[KernelConfig] = None) -> float:
    """Gaussian-kernel weighted line length around ``center`` (km).

    Each line piece contributes ``length * exp(-d**2 / (2 * radius_km**2))``
    where ``d`` is the distance from ``center`` to the piece midpoint; pieces
    beyond ``truncation_factor * radius_km`` are ignored.

    Parameters
    ----------
    lines : sequence of (m, 2) arrays or LineSamples
        Planar polylines in km.
    center : (2,) array-like
    radius_km : float
        Kernel standard deviation.
    """
    cfg = cfg or KernelConfig()
    if not radius_km > 0:
        raise ValueError("radius_km must be positive")
    samples = _as_samples(lines, cfg)
    if samples.tree is None:
        return 0.0
    center = np.asarray(center, dtype=float)
    cutoff = cfg.truncation_factor * radius_km
    idx = samples.tree.query_ball_point(center, cutoff)
    return _density_from_candidates(samples, idx, center, radius_km, cutoff)


# --------------------------------------------------------------------------
# land cover

def _zone_pixels(raster: Raster, center, radius: float,
                 projection: Optional[ProjectionSpec]) -> np.ndarray:
    """Row-major flat indices of pixels whose centre lies within ``radius`` km."""
    if raster.units == "km":
        cs = raster.cellsize
        c0 = max(0, int(math.floor((center[0] - radius - raster.xllcorner) / cs)))
        c1 = min(raster.ncols - 1, int(math.ceil((center[0] + radius - raster.xllcorner) / cs)))
        top = raster.yllcorner + raster.nrows * cs
        r0 = max(0, int(math.floor((top - (center[1] + radius)) / cs)))
        r1 = min(raster.nrows - 1, int(math.ceil((top - (center[1] - radius)) / cs)))
        if c0 > c1 or r0 > r1:
            return np.empty(0, dtype=np.int64)
        cols = np.arange(c0, c1 + 1)
        rows = np.arange(r0, r1 + 1)
        px = raster.xllcorner + (cols + 0.5) * cs
        py = top - (rows + 0.5) * cs
        d2 = (px[None, :] - center[0]) ** 2 + (py[:, None] - center[1]) ** 2
        rr, cc = np.nonzero(d2 <= radius * radius)
        return rows[rr] * raster.ncols + cols[cc]
    key = ("tree", projection)
    if key not in raster._cache:
        raster._cache[key] = cKDTree(raster.planar_centers(projection))
    idx = raster._cache[key].query_ball_point(np.asarray(center, dtype=float), radius)
    return np.sort(np.asarray(idx, dtype=np.int64))


def landcover_proportions(raster: Raster, center, cfg: Optional[ZonalConfig] = None,
                          projection: Optional[ProjectionSpec] = None) -> np.ndarray:
    """Share of each land-cover class inside the circular zone around ``center``.

    The denominator counts every raster pixel in the zone, NODATA included,
    so proportions sum to one only when the zone is free of NODATA.

    Returns
    -------
    ndarray
        One proportion per entry of ``raster.classes``.

    Raises
    ------
    ZonalError
        If the zone contains no valid pixel.
    """
    cfg = cfg or ZonalConfig()
    if raster.kind != "categorical":
        raise ValueError("land-cover proportions need a categorical raster")
    idx = _zone_pixels(raster, np.asarray(center, dtype=float), cfg.radius_km, projection)
    flat = raster.values.ravel()[idx]
    valid = raster.valid_mask.ravel()[idx]
    if not valid.any():
        raise ZonalError(f"no valid land-cover pixel within {cfg.radius_km:.4g} km of {tuple(center)}")
    vals = flat[valid]
    total = len(idx)
    return np.array([np.count_nonzero(vals == c) / total for c in raster.classes])


# --------------------------------------------------------------------------
# batch enrichment

class CovariateTable(NamedTuple):
    values: np.ndarray
    names: tuple


def enrich_points(points, lines, landcover: Optional[Raster],
                  kcfg: Optional[KernelConfig] = None, zcfg: Optional[ZonalConfig] = None,
                  projection: Optional[ProjectionSpec] = None,
                  n_jobs: int = 1) -> CovariateTable:
    """Compute motorway densities and land-cover proportions for each point.

    Columns are ``motorway_<r>km`` for each kernel radius followed by
    ``lc_<code>`` for each land-cover class. Points whose land-cover zone is
    empty get NaN proportions and a warning.
    """
    kcfg = kcfg or KernelConfig()
    zcfg = zcfg or ZonalConfig()
    pts = check_points(points)
    samples = _as_samples(lines if lines is not None else [], kcfg)
    names = [motorway_column(r) for r in kcfg.radii_km]
    if landcover is not None:
        names += [landcover_column(c) for c in landcover.classes]
        if landcover.units == "deg":
            landcover.planar_centers(projection)  # warm the shared cache before threading
            _zone_pixels(landcover, np.zeros(2), 0.0, projection)
    radii = kcfg.radii_km
    rmax_cut = kcfg.truncation_factor * radii[-1]

    def work(sl: slice):
        block = np.empty((sl.stop - sl.start, len(names)))
        missing = 0
        for k, p in enumerate(pts[sl]):
            if samples.tree is not None:
                cand = samples.tree.query_ball_point(p, rmax_cut)
                for j, r in enumerate(radii):
                    block[k, j] = _density_from_candidates(samples, cand, p, r,
                                                           kcfg.truncation_factor * r)
            else:
                block[k, :len(radii)] = 0.0
            if landcover is not None:
                try:
                    block[k, len(radii):] = landcover_proportions(landcover, p, zcfg, projection)
                except ZonalError:
                    block[k, len(radii):] = np.nan
                    missing += 1
        return block, missing

    results = parallel_map(work, chunked(len(pts)), n_jobs)
    values = np.vstack([b for b, _ in results]) if results else np.empty((0, len(names)))
    missing = sum(m for _, m in results)
    if missing:
        warnings.warn(f"{missing} locations have no valid land-cover pixels; covariates left missing",
                      EnrichmentWarning, stacklevel=2)
    return CovariateTable(values, tuple(names))


def aggregate_to_cells(points, values, grid: Grid):
    """Average observations per grid cell.

    Returns
    -------
    list of (cell_index, mean, count)
        Populated cells in ascending index order.
    """
    pts = check_points(points)
    vals = check_values(values, len(pts))
    cells = points_to_cells(grid, pts)
    outside = int(np.count_nonzero(cells < 0))
    if outside:
        warnings.warn(f"{outside} observations fall outside the grid and were dropped",
                      EnrichmentWarning, stacklevel=2)
    out = []
    inside = cells >= 0
    for idx in np.unique(cells[inside]):
        v = vals[cells == idx]
        out.append((int(idx), math.fsum(v.tolist()) / len(v), int(len(v))))
    return out


class CovariateEnricher(TransformerMixin, BaseEstimator):
    """Transformer mapping planar locations to covariate columns.

    Parameters
    ----------
    lines : PolylineSet or sequence of (m, 2) planar arrays, optional
        Motorway polylines; a PolylineSet is projected with ``projection``.
    landcover : Raster, optional
        Categorical land-cover raster.
    projection : ProjectionSpec, optional
        Needed for geographic inputs.
    kernel_radii_km, kernel_truncation, line_step_km, landcover_area_km2
        See :class:`KernelConfig` and :class:`ZonalConfig`.
    n_jobs : int
        Worker threads; output does not depend on it.
    """

    def __init__(self, lines=None, landcover=None, projection=None,
                 kernel_radii_km=(1.0, 10.0, 25.0), kernel_truncation=3.0,
                 line_step_km=0.1, landcover_area_km2=25.0, n_jobs=1):
        self.lines = lines
        self.landcover = landcover
        self.projection = projection
        self.kernel_radii_km = kernel_radii_km
        self.kernel_truncation = kernel_truncation
        self.line_step_km = line_step_km
        self.landcover_area_km2 = landcover_area_km2
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.kernel_config_ = KernelConfig(tuple(self.kernel_radii_km), self.kernel_truncation,
                                           self.line_step_km)
        self.zonal_config_ = ZonalConfig(self.landcover_area_km2)
        lines = self.lines if self.lines is not None else []
        if isinstance(lines, PolylineSet):
            if self.projection is None:
                raise ValueError("a projection is needed for geographic polylines")
            lines = lines.to_planar(self.projection)
        self.samples_ = sample_lines(lines, self.kernel_config_.line_sample_step_km)
        names = [motorway_column(r) for r in self.kernel_config_.radii_km]
        if self.landcover is not None:
            names += [landcover_column(c) for c in self.landcover.classes]
        self.feature_names_out_ = np.array(names, dtype=object)
        return self

    def transform(self, X):
        check_is_fitted(self, "samples_")
        table = enrich_points(X, self.samples_, self.landcover, self.kernel_config_,
                              self.zonal_config_, self.projection, self.n_jobs)
        return table.values

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_.copy()
