"""Empirical semivariograms and parametric variogram models."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize, minimize_scalar, nnls
from scipy.spatial.distance import pdist

from ._utils import check_points, check_values

__all__ = [
    "FAMILIES",
    "EmpiricalVariogram",
    "VariogramModel",
    "VariogramFitError",
    "VariogramWarning",
    "empirical_variogram",
    "variogram_value",
    "variogram_shape",
    "fit_variogram",
    "wls_objective",
    "default_cutoff",
]

FAMILIES = ("spherical", "exponential", "gaussian")


class VariogramFitError(RuntimeError):
    pass


class VariogramWarning(UserWarning):
    pass


def variogram_shape(family: str, u):
    """Unit-sill structure function of the scaled lag ``u = h / range``.

    Exponential and gaussian use the practical-range convention, reaching
    95% of the sill at ``u = 1``.
    """
    u = np.asarray(u, dtype=float)
    if family == "spherical":
        return np.where(u < 1.0, 1.5 * u - 0.5 * u ** 3, 1.0)
    if family == "exponential":
        return 1.0 - np.exp(-3.0 * u)
    if family == "gaussian":
        return 1.0 - np.exp(-3.0 * u * u)
    raise ValueError(f"unknown variogram family {family!r}; choose from {FAMILIES}")


@dataclass(frozen=True)
class VariogramModel:
    family: str = "spherical"
    nugget: float = 0.0
    partial_sill: float = 1.0
    range_km: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown variogram family {self.family!r}; choose from {FAMILIES}")
        if not (self.nugget >= 0 and self.partial_sill >= 0):
            raise ValueError("nugget and partial_sill must be non-negative")
        if not (self.range_km > 0 and math.isfinite(self.range_km)):
            raise ValueError("range_km must be positive")

    @property
    def sill(self) -> float:
        return self.nugget + self.partial_sill

    def __call__(self, h):
        return variogram_value(self, h)

    def covariance(self, h):
        """``sill - gamma(h)``, the matching stationary covariance."""
        return self.sill - variogram_value(self, h)


def variogram_value(m: VariogramModel, h):
    """Semivariance at lag ``h`` (scalar or array); exactly 0 at ``h = 0``."""
    harr = np.asarray(h, dtype=float)
    if np.any(harr < 0) or np.any(np.isnan(harr)):
        raise ValueError("lag distances must be non-negative")
    g = m.nugget + m.partial_sill * variogram_shape(m.family, harr / m.range_km)
    g = np.where(harr > 0.0, g, 0.0)
    return float(g) if np.ndim(h) == 0 else g


@dataclass(frozen=True, eq=False)
class EmpiricalVariogram:
    """Binned semivariance.

    Attributes
    ----------
    lags, gamma, counts : ndarray
        Mean pair distance, mean half squared difference and pair count
        of each populated bin, in increasing lag order.
    cutoff_km : float
    n_bins : int
        Number of equal-width bins the cutoff was split into.
    variance : float or None
        Sample variance of the input values, used to seed fitting.
    """

    lags: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    cutoff_km: float
    n_bins: int
    variance: Optional[float] = None

    def __post_init__(self):
        for name in ("lags", "gamma", "counts"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (len(self.lags) == len(self.gamma) == len(self.counts)):
            raise ValueError("lags, gamma and counts must align")

    def __len__(self):
        return len(self.lags)


def default_cutoff(points) -> float:
    """One third of the largest pairwise distance."""
    pts = check_points(points)
    if len(pts) < 2:
        raise ValueError("need at least 2 points")
    return float(pdist(pts).max()) / 3.0


def empirical_variogram(points, values, cutoff_km: Optional[float] = None,
                        n_bins: int = 15) -> EmpiricalVariogram:
    """Classical (Matheron) semivariogram estimate in equal-width lag bins.

    Every pair at distance ``d <= cutoff_km`` adds ``0.5 * (z_i - z_j)**2``
    to bin ``floor(d / width)`` (the last bin is closed on the right). Bin
    sums use exact summation, so the result does not depend on point order.
    """
    pts = check_points(points)
    if len(pts) < 2:
        raise ValueError("need at least 2 points")
    z = check_values(values, len(pts))
    if cutoff_km is None:
        cutoff_km = default_cutoff(pts)
    if not cutoff_km > 0:
        raise ValueError("cutoff_km must be positive")
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")

    d = pdist(pts)
    iu, ju = np.triu_indices(len(pts), k=1)
    sq = 0.5 * (z[iu] - z[ju]) ** 2
    keep = d <= cutoff_km
    if not keep.any():
        raise ValueError(f"no pairs within cutoff {cutoff_km} km")
    d, sq = d[keep], sq[keep]
    width = cutoff_km / n_bins
    b = np.minimum((d / width).astype(np.int64), n_bins - 1)

    order = np.argsort(b, kind="stable")
    b, d, sq = b[order], d[order], sq[order]
    bins, starts, counts = np.unique(b, return_index=True, return_counts=True)
    lags, gamma = [], []
    for s, c in zip(starts, counts):
        lags.append(math.fsum(d[s:s + c].tolist()) / c)
        gamma.append(math.fsum(sq[s:s + c].tolist()) / c)
    var = float(np.var(z, ddof=1)) if len(z) > 1 else None
    return EmpiricalVariogram(np.array(lags), np.array(gamma), counts.astype(float),
                              float(cutoff_km), int(n_bins), var)


def wls_objective(emp: EmpiricalVariogram, model: VariogramModel) -> float:
    """``sum N_h / h**2 * (gamma_hat - gamma_model)**2`` over bins with ``h > 0``."""
    h, g, n = _positive_bins(emp)
    resid = g - variogram_value(model, h)
    return float(np.sum(n / h ** 2 * resid ** 2))


def _positive_bins(emp: EmpiricalVariogram):
    pos = emp.lags > 0
    return emp.lags[pos], emp.gamma[pos], emp.counts[pos]


def fit_variogram(emp: EmpiricalVariogram, family: str = "spherical") -> VariogramModel:
    """Weighted least-squares fit of a variogram model to binned semivariances.

    Minimises :func:`wls_objective` over ``(nugget, partial_sill, range)``
    under non-negativity, with the range kept in ``(0, 10 * cutoff]``. A
    bounded quasi-Newton search runs from eight starting points; its best
    result is then polished by profiling the range, for which the optimal
    nugget and partial sill solve a non-negative least-squares problem.
    A flat empirical variogram gives a pure-nugget model with a warning.
    """
    variogram_shape(family, 0.0)
    h, g, n = _positive_bins(emp)
    if len(h) < 3:
        raise VariogramFitError(f"need at least 3 populated bins with positive lag, got {len(h)}")
    w = n / h ** 2
    cutoff = emp.cutoff_km

    if np.ptp(g) <= 1e-12 * max(np.max(np.abs(g)), 1e-300):
        warnings.warn("flat empirical variogram; fitting a pure-nugget model",
                      VariogramWarning, stacklevel=2)
        return VariogramModel(family, float(np.sum(w * g) / np.sum(w)), 0.0, float(cutoff))

    scale = emp.variance if emp.variance and emp.variance > 0 else float(np.max(g))
    r_lo, r_hi = 1e-6 * cutoff, 10.0 * cutoff
    gs = g / scale

    def obj(p):
        nug, ps, r = p
        pred = nug + ps * variogram_shape(family, h / (r * cutoff))
        return float(np.sum(w * (gs - pred) ** 2))

    bounds = [(0.0, None), (0.0, None), (r_lo / cutoff, r_hi / cutoff)]
    results = []
    failures = []
    for nug0 in (0.0, 0.5):
        for ps0 in (0.5, 1.0):
            for r0 in (0.25, 0.5):
                try:
                    res = minimize(obj, np.array([nug0, ps0, r0]), method="L-BFGS-B",
                                   bounds=bounds)
                except (ValueError, FloatingPointError) as exc:
                    failures.append(str(exc))
                    continue
                if np.all(np.isfinite(res.x)) and np.isfinite(res.fun):
                    results.append((res.fun, tuple(res.x)))
                else:
                    failures.append(res.message)
    if not results:
        raise VariogramFitError(f"variogram fit failed from every start: {failures}")
    best_fun, best = min(results, key=lambda t: t[0])

    sw = np.sqrt(w)

    def profile(r):
        A = np.column_stack([np.ones_like(h), variogram_shape(family, h / (r * cutoff))])
        coef, _ = nnls(A * sw[:, None], gs * sw)
        return float(np.sum(w * (gs - A @ coef) ** 2)), coef

    scan = np.geomspace(r_lo / cutoff, r_hi / cutoff, 241)
    vals = [profile(r)[0] for r in scan]
    k = int(np.argmin(vals))
    lo, hi = scan[max(k - 1, 0)], scan[min(k + 1, len(scan) - 1)]
    res = minimize_scalar(lambda r: profile(r)[0], bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    for r in (res.x, scan[k], best[2]):
        f, coef = profile(r)
        if f < best_fun:
            best_fun, best = f, (coef[0], coef[1], r)

    nug, ps, r = best
    return VariogramModel(family, max(float(nug), 0.0) * scale, max(float(ps), 0.0) * scale,
                          float(r) * cutoff)
