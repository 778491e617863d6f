"""Expected skyglow per grid cell from a night-time radiance raster.

Each radiance pixel is treated as a point source whose contribution to a
cell decays with distance as ``d ** -exponent`` (Walker's law, exponent 2.5).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ._utils import chunked, parallel_map
from .geo import EARTH_RADIUS_KM, Grid, ProjectionSpec
from .io import Raster

__all__ = ["SkyglowParams", "SkyglowWarning", "radiance_sources", "walker_skyglow", "log_skyglow"]


class SkyglowWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SkyglowParams:
    exponent: float = 2.5
    min_distance_km: float = 1.0
    cutoff_km: float = 100.0

    def __post_init__(self):
        if not self.exponent > 0:
            raise ValueError("exponent must be positive")
        if not 0 < self.min_distance_km < self.cutoff_km:
            raise ValueError("need 0 < min_distance_km < cutoff_km")


def _pixel_size_km(raster: Raster) -> float:
    if raster.units == "km":
        return raster.cellsize
    return math.radians(raster.cellsize) * EARTH_RADIUS_KM


def radiance_sources(radiance: Raster, projection: Optional[ProjectionSpec] = None,
                     aggregate: bool = True):
    """Point sources ``(positions (m, 2) km, power (m,))`` from a radiance raster.

    Power is radiance times pixel area. NODATA pixels are skipped, negative
    radiance is clamped to zero. With ``aggregate`` set, pixels finer than
    1 km are merged into blocks of about 1 km whose power is the sum of their
    pixels' power, placed at the block centre.
    """
    vals = radiance.values
    mask = radiance.valid_mask
    neg = int(np.count_nonzero(mask & (vals < 0)))
    if neg:
        warnings.warn(f"{neg} negative radiance pixels clamped to 0", SkyglowWarning,
                      stacklevel=2)
    L = np.where(mask, np.maximum(vals, 0.0), 0.0).ravel()
    power = L * radiance.pixel_areas_km2()
    pos = radiance.planar_centers(projection)
    valid = mask.ravel()

    size = _pixel_size_km(radiance)
    f = int(math.floor(1.0 / size)) if aggregate and size < 1.0 else 1
    if f > 1:
        nr, nc = radiance.nrows, radiance.ncols
        rows = np.arange(nr * nc) // nc // f
        cols = np.arange(nr * nc) % nc // f
        block = rows * (-(-nc // f)) + cols
        nb = int(block.max()) + 1
        bpow = np.bincount(block, weights=power, minlength=nb)
        bcnt = np.bincount(block, minlength=nb)
        bx = np.bincount(block, weights=pos[:, 0], minlength=nb) / bcnt
        by = np.bincount(block, weights=pos[:, 1], minlength=nb) / bcnt
        bvalid = np.bincount(block, weights=valid.astype(float), minlength=nb) > 0
        return np.column_stack([bx, by])[bvalid], bpow[bvalid]
    return pos[valid], power[valid]


def walker_skyglow(radiance: Raster, grid: Grid, params: Optional[SkyglowParams] = None,
                   projection: Optional[ProjectionSpec] = None, aggregate: bool = True,
                   n_jobs: int = 1) -> np.ndarray:
    """Skyglow at each cell centre.

    ``skyglow = sum(power_k * max(d_k, min_distance_km) ** -exponent)`` over
    sources within ``cutoff_km``. Cells with no source in range are NaN.
    """
    params = params or SkyglowParams()
    projection = projection if projection is not None else grid.projection
    pos, power = radiance_sources(radiance, projection, aggregate)
    centers = grid.centers
    out = np.full(grid.n_cells, np.nan)
    if len(pos) == 0:
        warnings.warn("radiance raster has no valid pixels", SkyglowWarning, stacklevel=2)
        return out
    tree = cKDTree(pos)

    def work(sl):
        res = np.full(sl.stop - sl.start, np.nan)
        for k, c in enumerate(centers[sl]):
            idx = tree.query_ball_point(c, params.cutoff_km)
            if not idx:
                continue
            idx = np.sort(np.asarray(idx, dtype=np.int64))
            d = np.hypot(pos[idx, 0] - c[0], pos[idx, 1] - c[1])
            d = np.maximum(d, params.min_distance_km)
            res[k] = float(np.dot(power[idx], d ** -params.exponent))
        return res

    parts = parallel_map(work, chunked(grid.n_cells), n_jobs)
    if parts:
        out = np.concatenate(parts)
    missing = int(np.count_nonzero(np.isnan(out)))
    if missing:
        warnings.warn(f"{missing} cells have no radiance pixel within {params.cutoff_km} km",
                      SkyglowWarning, stacklevel=2)
    return out


def log_skyglow(values) -> np.ndarray:
    """Natural log; NaN (missing cells) passes through."""
    v = np.asarray(values, dtype=float)
    bad = np.flatnonzero(v <= 0)
    if len(bad):
        raise ValueError(f"non-positive skyglow at cell {int(bad[0])}: {v[bad[0]]!r}")
    return np.log(v)
