"""Synthetic fields, biased sampling and brute-force oracles.

Randomness comes from numpy's PCG64 generator. A configuration seed is
expanded with ``numpy.random.SeedSequence(seed).spawn(2)``: child 0 drives
the field, child 1 the sampling. Both draws are single sequential calls, so
results depend only on the seed and never on threading.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .enrich import KernelConfig, ZonalConfig, enrich_points
from .geo import GeoPoint, Grid, ProjectionSpec, build_grid, inverse_project_xy, project_lonlat
from .io import PolylineSet, Raster
from .kriging import KrigingError, PredictionResult
from .variogram import VariogramModel, variogram_value

__all__ = [
    "MAX_DENSE_CELLS",
    "SimConfig",
    "Scenario",
    "simulate_gp_field",
    "biased_sample",
    "dense_kriging_oracle",
    "make_scenario",
]

MAX_DENSE_CELLS = 2500


def _streams(seed: int):
    field_ss, sample_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.Generator(np.random.PCG64(field_ss)), np.random.Generator(np.random.PCG64(sample_ss))


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Inputs of a simulation run.

    ``drift`` is the ``(n_cells, p)`` drift matrix (intercept only when
    omitted) and ``true_coefficients`` its ``p`` coefficients.
    """

    seed: int
    grid: Grid
    true_coefficients: np.ndarray
    variogram: VariogramModel
    sampling_intensity: np.ndarray
    n_samples: int
    drift: Optional[np.ndarray] = None
    noise_sd: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.sampling_intensity, dtype=float)
        if w.shape != (self.grid.n_cells,) or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("sampling_intensity needs one non-negative weight per cell, not all zero")
        object.__setattr__(self, "sampling_intensity", w)
        beta = np.atleast_1d(np.asarray(self.true_coefficients, dtype=float))
        object.__setattr__(self, "true_coefficients", beta)
        drift = (np.ones((self.grid.n_cells, 1)) if self.drift is None
                 else np.asarray(self.drift, dtype=float).reshape(self.grid.n_cells, -1))
        if drift.shape[1] != len(beta):
            raise ValueError("true_coefficients must match the drift columns")
        object.__setattr__(self, "drift", drift)
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")


def simulate_gp_field(cfg: SimConfig) -> np.ndarray:
    """True value per cell: drift trend plus a correlated Gaussian field.

    The field covariance is ``C(h) = sill - gamma(h)`` between cell centres,
    sampled through a symmetric eigen square root.
    """
    n = cfg.grid.n_cells
    if n > MAX_DENSE_CELLS:
        raise ValueError(f"dense simulation supports at most {MAX_DENSE_CELLS} cells, got {n}")
    trend = cfg.drift @ cfg.true_coefficients
    rng, _ = _streams(cfg.seed)
    eps = rng.standard_normal(n)
    vgm = cfg.variogram
    if vgm.sill == 0:
        return trend
    c = cfg.grid.centers
    h = np.hypot(c[:, None, 0] - c[None, :, 0], c[:, None, 1] - c[None, :, 1])
    C = vgm.sill - variogram_value(vgm, h)
    C = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(C)
    if w.min() < -1e-8 * max(w.max(), 1e-300):
        raise KrigingError(f"covariance is not positive semidefinite (eigenvalue {w.min():.3g})")
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return trend + root @ (V.T @ eps)


def biased_sample(field_values, cfg: SimConfig):
    """Draw observations with cell probability proportional to the intensity.

    Returns
    -------
    locations : (n_samples, 2) ndarray
        Uniformly jittered inside the drawn cells.
    values : (n_samples,) ndarray
        Cell truth plus Gaussian noise with sd ``cfg.noise_sd``.
    """
    if cfg.n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    f = np.asarray(field_values, dtype=float)
    _, rng = _streams(cfg.seed)
    p = cfg.sampling_intensity / cfg.sampling_intensity.sum()
    cells = rng.choice(len(p), size=cfg.n_samples, p=p)
    s = cfg.grid.cell_size_km
    offsets = rng.uniform(-0.5 * s, 0.5 * s, size=(cfg.n_samples, 2))
    noise = rng.standard_normal(cfg.n_samples) * cfg.noise_sd
    locs = cfg.grid.centers[cells] + offsets
    return locs, f[cells] + noise


def dense_kriging_oracle(locations, values, drift, vgm: VariogramModel, target,
                         target_drift) -> PredictionResult:
    """Textbook universal kriging: assemble the full system entry by entry and
    solve it with a general dense solver."""
    locs = [tuple(map(float, p)) for p in locations]
    n = len(locs)
    if n > 50:
        raise ValueError("oracle is limited to 50 points")
    F = np.asarray(drift, dtype=float).reshape(n, -1)
    p = F.shape[1]
    A = np.zeros((n + p, n + p))
    for i in range(n):
        for j in range(n):
            A[i, j] = variogram_value(vgm, math.hypot(locs[i][0] - locs[j][0], locs[i][1] - locs[j][1]))
        for k in range(p):
            A[i, n + k] = F[i, k]
            A[n + k, i] = F[i, k]
    b = np.zeros(n + p)
    for i in range(n):
        b[i] = variogram_value(vgm, math.hypot(locs[i][0] - target[0], locs[i][1] - target[1]))
    b[n:] = np.asarray(target_drift, dtype=float)
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise KrigingError(f"singular oracle system: {exc}") from exc
    lam, nu = x[:n], x[n:]
    mean = sum(lam[i] * float(values[i]) for i in range(n))
    var = float(lam @ b[:n] + nu @ b[n:])
    return PredictionResult(float(mean), var)


# --------------------------------------------------------------------------
# full synthetic study area

@dataclass(frozen=True, eq=False)
class Scenario:
    """A synthetic study area with every input the pipeline consumes."""

    projection: ProjectionSpec
    boundary_planar: np.ndarray
    boundary_lonlat: np.ndarray
    grid: Grid
    lines: PolylineSet
    landcover: Raster
    radiance: Raster

    def developed_share(self) -> np.ndarray:
        return sum(self.grid.covariate(f"lc_{c}") for c in (21, 22, 23, 24))


def _square_ring(side: float, n_per_edge: int = 20) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n_per_edge, endpoint=False)
    h = side / 2.0
    south = np.column_stack([-h + side * t, np.full_like(t, -h)])
    east = np.column_stack([np.full_like(t, h), -h + side * t])
    north = np.column_stack([h - side * t, np.full_like(t, h)])
    west = np.column_stack([np.full_like(t, -h), h - side * t])
    ring = np.vstack([south, east, north, west])
    return np.vstack([ring, ring[:1]])


def make_scenario(seed: int = 0, n_side: int = 30, cell_size_km: float = 5.0,
                  origin: GeoPoint = GeoPoint(-77.6, 40.9), landcover_res_deg: float = 0.005,
                  radiance_res_deg: float = 0.01, kernel: Optional[KernelConfig] = None,
                  zonal: Optional[ZonalConfig] = None, n_jobs: int = 1) -> Scenario:
    """Build a square study area with towns, motorways, land cover and radiance.

    Towns are ringed by developed land-cover classes, motorways link them,
    and radiance peaks on towns and motorways. Grid cells are enriched with
    the same covariates the pipeline computes.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 7])))
    proj = ProjectionSpec(GeoPoint(*origin))
    side = n_side * cell_size_km
    h = side / 2.0
    ring = _square_ring(side)
    lon, lat = inverse_project_xy(ring[:, 0], ring[:, 1], proj)
    ring_ll = np.column_stack([lon, lat])
    grid = build_grid(np.array([[-h, -h], [h, -h], [h, h], [-h, h], [-h, -h]]),
                      cell_size_km, projection=proj)

    n_towns = 4
    towns = rng.uniform(-0.8 * h, 0.8 * h, size=(n_towns, 2))
    town_size = rng.uniform(4.0, 10.0, size=n_towns)

    # motorways: town-to-town chain plus one straight road across the area
    lines_xy = [np.vstack([towns[i], towns[i + 1]]) for i in range(n_towns - 1)]
    y0, y1 = rng.uniform(-0.9 * h, 0.9 * h, size=2)
    lines_xy.append(np.array([[-1.2 * h, y0], [1.2 * h, y1]]))
    lines_ll = []
    for l in lines_xy:
        t = np.linspace(0.0, 1.0, 25)[:, None]
        dense = l[0] + t * (l[1] - l[0])
        lo, la = inverse_project_xy(dense[:, 0], dense[:, 1], proj)
        lines_ll.append(np.column_stack([lo, la]))
    lines = PolylineSet(tuple(lines_ll), tuple("highway=motorway" for _ in lines_ll))

    def raster_frame(res):
        margin = 0.25
        x0, x1 = ring_ll[:, 0].min() - margin, ring_ll[:, 0].max() + margin
        y0_, y1_ = ring_ll[:, 1].min() - margin, ring_ll[:, 1].max() + margin
        ncols = int(math.ceil((x1 - x0) / res))
        nrows = int(math.ceil((y1_ - y0_) / res))
        cols = np.arange(ncols)
        rows = np.arange(nrows)
        X, Y = np.meshgrid(x0 + (cols + 0.5) * res, y0_ + (nrows - rows - 0.5) * res)
        px, py = project_lonlat(X.ravel(), Y.ravel(), proj)
        return x0, y0_, nrows, ncols, px.reshape(X.shape), py.reshape(X.shape)

    def town_distance(px, py):
        d = np.full(px.shape, np.inf)
        for (tx, ty), s in zip(towns, town_size):
            d = np.minimum(d, np.hypot(px - tx, py - ty) / s)
        return d

    def line_distance(px, py):
        d = np.full(px.shape, np.inf)
        for a, b in lines_xy:
            ab = b - a
            t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / (ab @ ab), 0.0, 1.0)
            d = np.minimum(d, np.hypot(px - a[0] - t * ab[0], py - a[1] - t * ab[1]))
        return d

    # land cover
    x0, y0_, nrows, ncols, px, py = raster_frame(landcover_res_deg)
    td = town_distance(px, py)
    # smooth background pattern mixing forest and agriculture
    k = rng.uniform(0.02, 0.06, size=(3, 2))
    ph = rng.uniform(0, 2 * np.pi, size=3)
    wave = sum(np.sin(k[i, 0] * px + k[i, 1] * py + ph[i]) for i in range(3))
    lc = np.where(wave > 0.8, 82, np.where(wave > 0.0, 81, np.where(wave > -1.5, 41, 43)))
    lc = np.where(wave < -2.4, 11, lc)
    lc = np.where(td < 1.6, 21, lc)
    lc = np.where(td < 1.0, 22, lc)
    lc = np.where(td < 0.6, 23, lc)
    lc = np.where(td < 0.3, 24, lc)
    lc = np.where(line_distance(px, py) < 0.4, 22, lc)
    landcover = Raster(lc.astype(float), x0, y0_, landcover_res_deg, -9999.0,
                       kind="categorical", units="deg")

    # radiance
    x0, y0_, nrows, ncols, px, py = raster_frame(radiance_res_deg)
    td = town_distance(px, py)
    rad = 40.0 * np.exp(-0.5 * (td / 0.5) ** 2) + 5.0 * np.exp(-0.5 * (line_distance(px, py) / 1.0) ** 2)
    rad += 0.2 + 0.05 * rng.random(rad.shape)
    radiance = Raster(np.round(rad, 4), x0, y0_, radiance_res_deg, -9999.0, kind="continuous",
                      units="deg")

    table = enrich_points(grid.centers, lines.to_planar(proj), landcover, kernel, zonal,
                          projection=proj, n_jobs=n_jobs)
    grid = grid.with_covariates(table.values, table.names)
    return Scenario(proj, ring, ring_ll, grid, lines, landcover, radiance)
