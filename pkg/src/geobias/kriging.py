"""Land-use regression and universal kriging.

The eight model variants compared in the analysis are combinations of a
covariate set (``mean``, ``landuse``, ``osm``, ``combined``) with or without
kriging; :class:`ModelSpec` enumerates them and :class:`SpatialRegressor` is
the scikit-learn style estimator that fits any of them.

Kriging uses the universal-kriging system in variogram form::

    [ G   F ] [lambda]   [g0]
    [ F^T 0 ] [ nu   ] = [f0]

where ``G[i, j] = gamma(|s_i - s_j|)`` and ``F`` is the drift matrix whose
first column is all ones. The prediction is ``lambda @ z`` and the kriging
variance ``lambda @ g0 + nu @ f0``.
"""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist, squareform
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from ._utils import check_points, check_values, chunked, parallel_map
from .enrich import landcover_column, motorway_column
from .geo import Grid
from .variogram import VariogramModel, empirical_variogram, fit_variogram, variogram_value

__all__ = [
    "COVARIATE_SETS",
    "ModelSpec",
    "RegressionFit",
    "KrigingModel",
    "PredictionResult",
    "KrigingError",
    "RankDeficientError",
    "KrigingWarning",
    "ols_fit",
    "select_drift_columns",
    "uk_fit",
    "uk_predict",
    "uk_predict_many",
    "uk_weights",
    "SpatialRegressor",
    "predict_grid",
    "loocv",
    "loocv_predictions",
]

COVARIATE_SETS = ("mean", "landuse", "osm", "combined")
DEFAULT_OSM_COLUMN = motorway_column(10.0)
DEDUP_TOL_KM = 1e-3

# The OpenBLAS build bundled with scipy can corrupt memory when two threads
# run getrs at once, so LU solves are serialised. Distance and variogram
# evaluation still overlap across threads.
_LAPACK_LOCK = threading.Lock()


def _lu_solve(lu, b):
    with _LAPACK_LOCK:
        return scipy.linalg.lu_solve(lu, b)


class KrigingError(RuntimeError):
    pass


class RankDeficientError(KrigingError):
    pass


class KrigingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """One row of the model comparison: a covariate set, with or without kriging."""

    covariates: str = "mean"
    kriging: bool = False

    def __post_init__(self):
        if self.covariates not in COVARIATE_SETS:
            raise ValueError(f"covariates must be one of {COVARIATE_SETS}")
        object.__setattr__(self, "kriging", bool(self.kriging))

    @property
    def model_id(self) -> int:
        return 2 * COVARIATE_SETS.index(self.covariates) + 1 + int(self.kriging)

    @classmethod
    def from_id(cls, model_id: int) -> "ModelSpec":
        if not 1 <= model_id <= 8:
            raise ValueError("model id must be 1..8")
        return cls(COVARIATE_SETS[(model_id - 1) // 2], bool((model_id - 1) % 2))

    @classmethod
    def all(cls) -> list["ModelSpec"]:
        return [cls.from_id(i) for i in range(1, 9)]

    def candidate_columns(self, names: Sequence[str], osm_column: str = DEFAULT_OSM_COLUMN):
        lc = [n for n in names if n.startswith("lc_")]
        osm = [osm_column] if osm_column in names else []
        if self.covariates in ("osm", "combined") and not osm:
            raise KeyError(f"covariate column {osm_column!r} not available")
        if self.covariates in ("landuse", "combined") and not lc:
            raise KeyError("no land-cover columns (lc_*) available")
        return {"mean": [], "landuse": lc, "osm": osm, "combined": osm + lc}[self.covariates]


class RegressionFit(NamedTuple):
    coefficients: np.ndarray
    residuals: np.ndarray
    residual_variance: float
    leverage: np.ndarray


class PredictionResult(NamedTuple):
    mean: float
    variance: float


def ols_fit(X, y, names: Optional[Sequence[str]] = None) -> RegressionFit:
    """Least squares via column-pivoted QR.

    Requires ``n >= p``; the residual variance ``SSE / (n - p)`` is NaN when
    ``n == p``. ``leverage`` holds the hat-matrix diagonal.

    Raises
    ------
    RankDeficientError
        Listing the columns that are linear combinations of the others.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ValueError("X must be (n, p) with n matching y")
    n, p = X.shape
    if n < p:
        raise ValueError(f"need at least as many observations ({n}) as drift columns ({p})")
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if p else 0.0)
    rank = int(np.count_nonzero(diag > tol))
    if rank < p:
        dep = sorted(int(j) for j in piv[rank:])
        labels = [names[j] for j in dep] if names is not None else dep
        raise RankDeficientError(f"drift matrix is rank deficient; dependent columns: {labels}")
    beta = np.empty(p)
    beta[piv] = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    rv = float(resid @ resid / (n - p)) if n > p else float("nan")
    return RegressionFit(beta, resid, rv, np.sum(Q * Q, axis=1))


def select_drift_columns(covariates, names: Sequence[str], spec: ModelSpec,
                         osm_column: str = DEFAULT_OSM_COLUMN) -> list[str]:
    """Choose the covariate columns entering the drift, guarding collinearity.

    Constant columns are dropped (the intercept spans them), as are columns
    whose variation comes from a single datum: leaving that datum out makes
    them constant, so no leave-one-out fold could estimate them. Since
    land-cover proportions sum to about one, the land-cover class with the
    largest mean proportion is then dropped as the reference class.
    """
    names = list(names)
    cov = np.asarray(covariates, dtype=float)
    if cov.ndim != 2 or cov.shape[1] != len(names):
        raise ValueError(f"covariates must have shape (n, {len(names)}), got {cov.shape}")
    cand = spec.candidate_columns(names, osm_column)
    kept = []
    for c in cand:
        col = cov[:, names.index(c)]
        if not np.all(np.isfinite(col)):
            continue
        _, counts = np.unique(col, return_counts=True)
        if len(col) - counts.max() >= 2:
            kept.append(c)
    lc = [c for c in kept if c.startswith("lc_")]
    if lc:
        means = [float(np.mean(cov[:, names.index(c)])) for c in lc]
        kept.remove(lc[int(np.argmax(means))])
    return kept


# --------------------------------------------------------------------------
# universal kriging

@dataclass(frozen=True, eq=False)
class KrigingModel:
    """Fitted universal-kriging state; immutable and safe to share across threads."""

    locations: np.ndarray
    values: np.ndarray
    drift: np.ndarray
    variogram: VariogramModel
    system: np.ndarray = field(repr=False)
    lu: tuple = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def p(self) -> int:
        return self.drift.shape[1]

    def rhs(self, targets, target_drift) -> np.ndarray:
        """Right-hand sides ``[g0; f0]`` as columns, shape ``(n + p, m)``."""
        g0 = variogram_value(self.variogram, cdist(self.locations, targets))
        return np.vstack([g0, np.asarray(target_drift, dtype=float).T])


def _dedupe(locations, values, drift):
    """Average exact duplicates, nudge near-duplicates 1 m east."""
    uniq, inverse, counts = np.unique(locations, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if len(uniq) < len(locations):
        warnings.warn(f"{len(locations) - len(uniq)} duplicate locations averaged before kriging",
                      KrigingWarning, stacklevel=3)
        first = np.full(len(uniq), -1)
        for i, k in enumerate(inverse):
            if first[k] < 0:
                first[k] = i
        order = np.argsort(first)  # keep first-occurrence order
        vals = np.array([math.fsum(values[inverse == k].tolist()) / counts[k] for k in order])
        drf = np.vstack([drift[inverse == k].mean(axis=0) for k in order])
        locations, values, drift = uniq[order], vals, drf
    pairs = cKDTree(locations).query_pairs(DEDUP_TOL_KM, output_type="ndarray")
    if len(pairs):
        locations = locations.copy()
        moved = np.unique(pairs.max(axis=1))
        locations[moved, 0] += DEDUP_TOL_KM
        warnings.warn(f"{len(moved)} near-duplicate locations jittered by 1 m",
                      KrigingWarning, stacklevel=3)
    return locations, values, drift


def uk_fit(locations, values, drift, vgm: VariogramModel) -> KrigingModel:
    """Build and LU-factorise the universal-kriging system."""
    pts = check_points(locations, "locations")
    z = check_values(values, len(pts))
    F = np.asarray(drift, dtype=float).reshape(len(pts), -1)
    if not np.all(np.isfinite(F)):
        raise ValueError("drift contains non-finite entries")
    pts, z, F = _dedupe(pts, z, F)
    n, p = F.shape
    if n < p + 1:
        raise KrigingError(f"need at least p + 1 = {p + 1} distinct locations, got {n}")
    if vgm.sill <= 0:
        raise KrigingError("variogram has zero sill; kriging system is singular")
    G = variogram_value(vgm, squareform(pdist(pts)))
    A = np.zeros((n + p, n + p))
    A[:n, :n] = G
    A[:n, n:] = F
    A[n:, :n] = F.T
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            with _LAPACK_LOCK:
                lu = scipy.linalg.lu_factor(A)
        except (scipy.linalg.LinAlgWarning, ValueError) as exc:
            raise KrigingError(f"kriging system is singular ({exc})") from exc
    d = np.abs(np.diag(lu[0]))
    if d.min() <= 1e-13 * d.max():
        raise KrigingError("kriging system is singular (check duplicate locations or "
                           "collinear drift columns)")
    return KrigingModel(pts, z, F, vgm, A, lu)


def uk_weights(m: KrigingModel, target, target_drift):
    """Kriging weights ``lambda`` and Lagrange multipliers ``nu`` for one target."""
    b = m.rhs(np.atleast_2d(np.asarray(target, dtype=float)),
              np.atleast_2d(np.asarray(target_drift, dtype=float)))
    sol = _lu_solve(m.lu, b)[:, 0]
    return sol[:m.n], sol[m.n:]


def _finish_variance(var, scale):
    tol = 1e-9 * max(1.0, scale)
    if np.any(var < -tol):
        raise KrigingError(f"negative kriging variance {var.min():.3g}")
    return np.maximum(var, 0.0)


def uk_predict_many(m: KrigingModel, targets, target_drift, n_jobs: int = 1):
    """Kriging means and variances at many targets.

    Targets are processed in fixed-size chunks, so results are bitwise
    identical for any ``n_jobs``.
    """
    T = check_points(targets, "targets")
    D = np.asarray(target_drift, dtype=float).reshape(len(T), -1)
    if D.shape[1] != m.p:
        raise ValueError(f"target drift has {D.shape[1]} columns, model expects {m.p}")

    def work(sl):
        b = m.rhs(T[sl], D[sl])
        sol = _lu_solve(m.lu, b)
        mean = m.values @ sol[:m.n]
        var = np.einsum("ij,ij->j", b, sol)
        return mean, var

    parts = parallel_map(work, chunked(len(T)), n_jobs)
    if not parts:
        return np.empty(0), np.empty(0)
    mean = np.concatenate([a for a, _ in parts])
    var = np.concatenate([v for _, v in parts])
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
        raise KrigingError("non-finite kriging solution")
    return mean, _finish_variance(var, m.variogram.sill)


def uk_predict(m: KrigingModel, target, target_drift) -> PredictionResult:
    mean, var = uk_predict_many(m, np.atleast_2d(np.asarray(target, dtype=float)),
                                np.atleast_2d(np.asarray(target_drift, dtype=float)))
    return PredictionResult(float(mean[0]), float(var[0]))


# --------------------------------------------------------------------------
# estimator

class SpatialRegressor(RegressorMixin, BaseEstimator):
    """Land-use regression with optional universal kriging.

    ``X`` holds planar coordinates in its first two columns (km) followed by
    covariate columns named by ``feature_names``.

    Parameters
    ----------
    covariates : {"mean", "landuse", "osm", "combined"}
        Covariate set entering the drift. ``landuse`` uses every ``lc_*``
        column, ``osm`` the single ``osm_column``.
    kriging : bool
        Krige with the drift inside the system; otherwise plain OLS.
    feature_names : sequence of str, optional
        Names of the covariate columns of ``X`` (after the coordinates).
    variogram : VariogramModel, optional
        Fixed variogram. When omitted it is fitted to the OLS residuals.
    variogram_family : str
    variogram_cutoff_km : float, optional
        Defaults to a third of the largest pairwise distance.
    variogram_bins : int
    osm_column : str
    n_jobs : int
    """

    def __init__(self, covariates="combined", kriging=True, feature_names=None,
                 variogram=None, variogram_family="spherical", variogram_cutoff_km=None,
                 variogram_bins=15, osm_column=DEFAULT_OSM_COLUMN, n_jobs=1):
        self.covariates = covariates
        self.kriging = kriging
        self.feature_names = feature_names
        self.variogram = variogram
        self.variogram_family = variogram_family
        self.variogram_cutoff_km = variogram_cutoff_km
        self.variogram_bins = variogram_bins
        self.osm_column = osm_column
        self.n_jobs = n_jobs

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.covariates, self.kriging)

    def _names(self, k):
        if self.feature_names is not None:
            names = list(self.feature_names)
            if len(names) != k:
                raise ValueError(f"feature_names has {len(names)} entries but X has {k} covariates")
            return names
        return [f"x{i}" for i in range(k)]

    def _drift(self, X):
        idx = [self.covariate_names_.index(c) for c in self.drift_columns_]
        return np.column_stack([np.ones(len(X)), X[:, 2:][:, idx]])

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64, ensure_min_features=2)
        y = check_values(y, len(X), "y")
        self.covariate_names_ = self._names(X.shape[1] - 2)
        spec = self.spec
        self.drift_columns_ = select_drift_columns(X[:, 2:], self.covariate_names_, spec,
                                                   self.osm_column)
        F = self._drift(X)
        ols = ols_fit(F, y, ["intercept"] + self.drift_columns_)
        self.coef_ = ols.coefficients
        self.residual_variance_ = ols.residual_variance
        self.n_features_in_ = X.shape[1]
        if spec.kriging:
            vgm = self.variogram
            if vgm is None:
                emp = empirical_variogram(X[:, :2], ols.residuals, self.variogram_cutoff_km,
                                          self.variogram_bins)
                self.empirical_variogram_ = emp
                vgm = fit_variogram(emp, self.variogram_family)
            self.variogram_ = vgm
            self.kriging_model_ = uk_fit(X[:, :2], y, F, vgm)
        else:
            self.variogram_ = None
            self.kriging_model_ = None
        return self

    def predict(self, X, return_variance=False):
        """Predict at the rows of ``X``; rows with missing drift covariates give NaN."""
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        F = self._drift(X)
        ok = np.all(np.isfinite(F), axis=1) & np.all(np.isfinite(X[:, :2]), axis=1)
        mean = np.full(len(X), np.nan)
        var = np.full(len(X), np.nan)
        if self.kriging_model_ is not None:
            mean[ok], var[ok] = uk_predict_many(self.kriging_model_, X[ok, :2], F[ok],
                                                self.n_jobs)
        else:
            mean[ok] = F[ok] @ self.coef_
            var[ok] = self.residual_variance_
        return (mean, var) if return_variance else mean


def predict_grid(model: SpatialRegressor, grid: Grid) -> Grid:
    """Attach predictions and variances to every grid cell.

    Cells missing a covariate the model uses stay NaN (unpredicted) and are
    reported with a warning.
    """
    check_is_fitted(model, "coef_")
    if grid.covariates is None:
        raise ValueError("grid has no covariates")
    names = list(grid.covariate_names)
    cols = []
    for c in model.covariate_names_:
        cols.append(grid.covariates[:, names.index(c)] if c in names
                    else np.full(grid.n_cells, np.nan if c in model.drift_columns_ else 0.0))
    X = np.column_stack([grid.centers] + cols) if cols else grid.centers
    mean, var = model.predict(X, return_variance=True)
    bad = int(np.count_nonzero(np.isnan(mean)))
    if bad:
        warnings.warn(f"{bad} grid cells lack covariates and were left unpredicted",
                      KrigingWarning, stacklevel=2)
    return grid.with_predictions(mean, var)


# --------------------------------------------------------------------------
# cross-validation

def loocv_predictions(model: SpatialRegressor, X, y, method: str = "fast") -> np.ndarray:
    """Leave-one-out predictions with drift columns and variogram held fixed.

    ``model`` must already be fitted on ``(X, y)``. ``method="fast"`` uses
    the exact deletion identities (hat-matrix for OLS, the inverse of the
    kriging system for kriging); ``method="refit"`` refits every fold.
    """
    check_is_fitted(model, "coef_")
    X = check_array(X, dtype=np.float64)
    y = check_values(y, len(X), "y")
    n = len(y)
    F = model._drift(X)
    if method not in ("fast", "refit"):
        raise ValueError("method must be 'fast' or 'refit'")
    if model.kriging_model_ is None and F.shape[1] == 1:
        # intercept only: each fold predicts the mean of the other values
        total = math.fsum(y.tolist())
        return np.array([(total - v) / (n - 1) for v in y])
    if method == "fast":
        if model.kriging_model_ is None:
            fit = ols_fit(F, y)
            denom = 1.0 - fit.leverage
            if np.any(denom <= 1e-12):
                raise KrigingError(f"fold {int(np.argmin(denom))} is not identifiable")
            return y - fit.residuals / denom
        km = model.kriging_model_
        if km.n != n:
            raise KrigingError("duplicate locations: use method='refit'")
        Ainv = _lu_solve(km.lu, np.eye(km.n + km.p))
        Ainv = 0.5 * (Ainv + Ainv.T)
        d = np.diag(Ainv)[:n]
        if np.any(np.abs(d) < 1e-14):
            raise KrigingError(f"fold {int(np.argmin(np.abs(d)))} gives a singular system")
        w = Ainv[:n, :n] @ km.values
        return km.values - w / d
    preds = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        try:
            if model.kriging_model_ is None:
                beta = np.linalg.lstsq(F[keep], y[keep], rcond=None)[0]
                preds[i] = F[i] @ beta
            else:
                km = uk_fit(X[keep, :2], y[keep], F[keep], model.variogram_)
                preds[i] = uk_predict(km, X[i, :2], F[i]).mean
        except (KrigingError, np.linalg.LinAlgError, ValueError) as exc:
            raise KrigingError(f"LOOCV fold {i} failed: {exc}") from exc
    return preds


def loocv(spec: ModelSpec, X, y, vgm: Optional[VariogramModel] = None,
          feature_names=None, method: str = "fast", **params) -> float:
    """Leave-one-out cross-validated mean squared error of a model variant.

    The drift columns, and for kriging variants the variogram (fitted once
    to the full-data OLS residuals unless ``vgm`` is given), are held fixed
    across folds.
    """
    X = check_array(X, dtype=np.float64, ensure_min_features=2)
    y = check_values(y, len(X), "y")
    if len(y) < 2:
        raise ValueError("LOOCV needs at least 2 data")
    model = SpatialRegressor(covariates=spec.covariates, kriging=spec.kriging,
                             feature_names=feature_names, variogram=vgm, **params).fit(X, y)
    preds = loocv_predictions(model, X, y, method)
    return float(np.mean((preds - y) ** 2))
