"""Validation metrics, model comparison and area-mean inference."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .geo import Grid
from .io import IngestError, format_float
from .kriging import ModelSpec, SpatialRegressor, loocv_predictions, predict_grid
from .skyglow import log_skyglow

__all__ = [
    "ValidationReport",
    "InferenceResult",
    "pearson",
    "spearman",
    "r_squared",
    "mse",
    "observed_mean",
    "state_mean",
    "override_observed",
    "compare_models",
    "write_report_csv",
    "format_report_table",
    "read_report_csv",
    "write_inference_csv",
    "read_inference_csv",
]

REPORT_COLUMNS = ["model_id", "covariates", "kriging", "loocv_mse", "spearman_rho", "r_squared"]
INFERENCE_COLUMNS = ["scope", "mean", "se_between", "se_within", "se_total", "n"]


def _pair(a, b, min_len):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < min_len:
        raise ValueError(f"need at least {min_len} values, got {len(a)}")
    return a, b


def pearson(a, b) -> float:
    a, b = _pair(a, b, 2)
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = float(da @ da), float(db @ db)
    if saa == 0.0 or sbb == 0.0:
        raise ValueError("zero variance; correlation undefined")
    return float(da @ db) / math.sqrt(saa * sbb)


def spearman(a, b) -> float:
    """Spearman's rho: Pearson correlation of mid-ranks."""
    a, b = _pair(a, b, 3)
    return pearson(rankdata(a), rankdata(b))


def r_squared(pred, external) -> float:
    """Squared Pearson correlation of ``pred`` with the log of ``external``."""
    pred, external = _pair(pred, external, 3)
    return pearson(pred, log_skyglow(external)) ** 2


def mse(pred, obs) -> float:
    pred, obs = _pair(pred, obs, 1)
    return float(np.mean((pred - obs) ** 2))


@dataclass(frozen=True)
class InferenceResult:
    mean: float
    se_between: float
    se_within: float
    se_total: float
    n_cells: int

    @property
    def se_total_linear(self) -> float:
        """``se_between + se_within``, kept for comparison with linear addition."""
        return self.se_between + self.se_within


@dataclass(frozen=True)
class ValidationReport:
    model: ModelSpec
    loocv_mse: float
    spearman_rho: float
    r_squared: float
    error: Optional[str] = None


def observed_mean(values) -> InferenceResult:
    """Mean of raw observations with ``se = sd / sqrt(n)``."""
    v = np.asarray(values, dtype=float).ravel()
    if len(v) < 2:
        raise ValueError("need at least 2 observations")
    se = float(np.std(v, ddof=1) / math.sqrt(len(v)))
    return InferenceResult(float(np.mean(v)), se, 0.0, se, len(v))


def override_observed(grid: Grid, observed) -> Grid:
    """Replace predictions at observed cells by their observed mean, variance 0.

    ``observed`` is the output of :func:`geobias.enrich.aggregate_to_cells`.
    """
    pred = (grid.prediction.copy() if grid.prediction is not None
            else np.full(grid.n_cells, np.nan))
    var = (grid.prediction_variance.copy() if grid.prediction_variance is not None
           else np.full(grid.n_cells, np.nan))
    for idx, m, _ in observed:
        pred[idx] = m
        var[idx] = 0.0
    return grid.with_predictions(pred, var)


def state_mean(grid: Grid, observed=None) -> InferenceResult:
    """Area mean over all cells with between- and within-cell standard errors.

    ``se_between = sd(cell values) / sqrt(n)``, ``se_within =
    sqrt(sum(cell variances)) / n`` and ``se_total`` combines the two in
    quadrature.
    """
    if observed is not None:
        grid = override_observed(grid, observed)
    if grid.prediction is None or grid.prediction_variance is None:
        raise ValueError("grid carries no predictions")
    pred, var = grid.prediction, grid.prediction_variance
    bad = np.flatnonzero(~(np.isfinite(pred) & np.isfinite(var)))
    if len(bad):
        raise ValueError(f"{len(bad)} unpredicted cells, e.g. {bad[:10].tolist()}")
    n = grid.n_cells
    if n < 2:
        raise ValueError("need at least 2 cells")
    se_b = float(np.std(pred, ddof=1) / math.sqrt(n))
    se_w = float(math.sqrt(math.fsum(var.tolist())) / n)
    return InferenceResult(float(np.mean(pred)), se_b, se_w, math.hypot(se_b, se_w), n)


def compare_models(specs: Sequence[ModelSpec], X, y, grid: Grid, external,
                   observed=None, feature_names=None, **params) -> list[ValidationReport]:
    """Fit each model variant and score it internally and externally.

    Internal: LOOCV MSE on ``(X, y)``. External: Spearman's rho and R² of
    the corrected cell map (predictions, with observed cells replaced by
    their observed means when ``observed`` is given) against ``external``
    skyglow, over cells where both are available. Metrics that cannot be
    computed are NaN with the reason recorded in ``error``; a failing model
    does not stop the others.
    """
    external = np.asarray(external, dtype=float)
    if len(external) != grid.n_cells:
        raise ValueError("external must hold one value per grid cell")
    reports = []
    for spec in sorted(specs, key=lambda s: s.model_id):
        cv = rho = r2 = math.nan
        try:
            model = SpatialRegressor(covariates=spec.covariates, kriging=spec.kriging,
                                     feature_names=feature_names, **params).fit(X, y)
            preds = loocv_predictions(model, X, y)
            cv = float(np.mean((preds - np.asarray(y, dtype=float)) ** 2))
            g = predict_grid(model, grid)
            if observed is not None:
                g = override_observed(g, observed)
            ok = np.isfinite(g.prediction) & np.isfinite(external)
            try:
                rho = spearman(g.prediction[ok], external[ok])
                r2 = r_squared(g.prediction[ok], external[ok])
            except ValueError as exc:  # e.g. a constant map has no ranks to compare
                reports.append(ValidationReport(spec, cv, rho, r2,
                                                f"external metrics undefined: {exc}"))
                continue
            reports.append(ValidationReport(spec, cv, rho, r2))
        except Exception as exc:  # keep going with the other models
            warnings.warn(f"model {spec.model_id} failed: {exc}", RuntimeWarning, stacklevel=2)
            reports.append(ValidationReport(spec, cv, rho, r2, f"{type(exc).__name__}: {exc}"))
    return reports


def write_report_csv(reports: Sequence[ValidationReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([r.model.model_id, r.model.covariates, str(r.model.kriging).lower(),
                        format_float(r.loocv_mse), format_float(r.spearman_rho),
                        format_float(r.r_squared)])


def read_report_csv(path) -> list[ValidationReport]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != REPORT_COLUMNS:
        raise IngestError(f"{path}: not a validation report")
    num = lambda s: float(s) if s else math.nan  # noqa: E731
    for r in rows[1:]:
        spec = ModelSpec(r[1], r[2] == "true")
        out.append(ValidationReport(spec, num(r[3]), num(r[4]), num(r[5])))
    return out


def format_report_table(reports: Sequence[ValidationReport]) -> str:
    """Aligned plain-text version of the comparison table."""
    head = f"{'Model':>5}  {'Covariates':<10} {'Kriging':<7} {'LOOCV MSE':>10} {'Spearman':>9} {'R^2':>7}"
    lines = [head, "-" * len(head)]
    for r in reports:
        def f(v, w):
            return f"{v:>{w}.3f}" if math.isfinite(v) else f"{'-':>{w}}"
        lines.append(f"{r.model.model_id:>5}  {r.model.covariates:<10} "
                     f"{'Yes' if r.model.kriging else 'No':<7} {f(r.loocv_mse, 10)} "
                     f"{f(r.spearman_rho, 9)} {f(r.r_squared, 7)}")
        if r.error:
            lines.append(f"       error: {r.error}")
    lines.append("")
    lines.append("LOOCV for the mean-only model without kriging predicts each datum by the mean "
                 "of the others (MSE = n/(n-1) * sample variance).")
    return "\n".join(lines) + "\n"


def write_inference_csv(results: dict, path) -> None:
    """Write ``{scope: InferenceResult}``; a ``<scope>_linear`` row is added for
    every scope with a within-cell component, carrying the linear SE sum."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INFERENCE_COLUMNS)
        for scope, r in results.items():
            w.writerow([scope, format_float(r.mean), format_float(r.se_between),
                        format_float(r.se_within), format_float(r.se_total), r.n_cells])
            if r.se_within > 0:
                w.writerow([f"{scope}_linear", format_float(r.mean), format_float(r.se_between),
                            format_float(r.se_within), format_float(r.se_total_linear),
                            r.n_cells])


def read_inference_csv(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != INFERENCE_COLUMNS:
        raise IngestError(f"{path}: not an inference CSV")
    out = {}
    try:
        for r in rows[1:]:
            out[r[0]] = InferenceResult(float(r[1]), float(r[2]), float(r[3]), float(r[4]),
                                        int(r[5]))
    except (ValueError, IndexError) as exc:
        raise IngestError(f"{path}: bad inference row ({exc})") from exc
    return out
