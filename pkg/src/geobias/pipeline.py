"""End-to-end workflow behind the command-line subcommands.

:class:`Pipeline` lazily loads inputs named in a :class:`PipelineConfig` and
exposes one method per subcommand; each writes its CSV/text outputs plus a
``<command>.manifest.json`` into ``output_dir``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .enrich import (
    KernelConfig,
    ZonalConfig,
    aggregate_to_cells,
    enrich_points,
    motorway_column,
)
from .geo import GeoPoint, build_grid, inverse_project_xy, points_to_cells, project_lonlat
from .io import (
    format_float,
    read_boundary,
    read_grid,
    read_observations,
    read_polylines,
    read_raster,
    write_boundary,
    write_grid,
    write_observations,
    write_polylines,
    write_raster,
    Observation,
)
from .kriging import ModelSpec, SpatialRegressor, predict_grid
from .metrics import (
    compare_models,
    format_report_table,
    observed_mean,
    state_mean,
    write_inference_csv,
    write_report_csv,
)
from .skyglow import SkyglowParams, log_skyglow, walker_skyglow
from .synth import SimConfig, biased_sample, make_scenario, simulate_gp_field
from .variogram import VariogramModel, wls_objective

__all__ = ["Pipeline", "simulate_inputs"]


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import scipy
    import shapely
    import sklearn
    return {"geobias": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "shapely": shapely.__version__}


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.inputs_used: dict[str, Path] = {}

    # ---------------------------------------------------------------- inputs

    def _input(self, key) -> Path:
        p = self.config.require_path(key)
        self.inputs_used[key] = p
        return p

    @property
    def threads(self) -> int:
        return max(1, int(self.config["threads"]))

    @property
    def output_dir(self) -> Path:
        out = self.config.path("output_dir")
        out.mkdir(parents=True, exist_ok=True)
        return out

    @cached_property
    def boundary(self):
        return read_boundary(self._input("boundary"))

    @property
    def projection(self):
        return self.boundary[1]

    @cached_property
    def kernel_config(self) -> KernelConfig:
        return KernelConfig(self.config["kernel_radii_km"], self.config["kernel_truncation"],
                            self.config["line_step_km"])

    @cached_property
    def zonal_config(self) -> ZonalConfig:
        return ZonalConfig(self.config["landcover_area_km2"])

    @cached_property
    def lines(self):
        return read_polylines(self._input("motorways")).to_planar(self.projection)

    @cached_property
    def landcover(self):
        return read_raster(self._input("landcover"), kind="categorical",
                           units=self.config["landcover_units"])

    @cached_property
    def radiance(self):
        return read_raster(self._input("radiance"), kind="continuous",
                           units=self.config["radiance_units"])

    @cached_property
    def grid(self):
        """Prediction grid with covariates, read from ``enriched_grid`` when set."""
        enriched = self.config.path("enriched_grid")
        if enriched is not None:
            self.inputs_used["enriched_grid"] = enriched
            return read_grid(enriched, self.config["cell_size_km"], self.projection)
        g = build_grid(self.boundary[0], self.config["cell_size_km"], self.projection)
        table = enrich_points(g.centers, self.lines, self.landcover, self.kernel_config,
                              self.zonal_config, self.projection, self.threads)
        return g.with_covariates(table.values, table.names)

    @cached_property
    def observations(self) -> list[Observation]:
        return read_observations(self._input("observations"))

    @cached_property
    def observation_xy(self) -> np.ndarray:
        lonlat = np.array([[o.location.lon, o.location.lat] for o in self.observations]).reshape(-1, 2)
        x, y = project_lonlat(lonlat[:, 0], lonlat[:, 1], self.projection)
        return np.column_stack([x, y])

    @cached_property
    def observed_cells(self):
        vals = np.array([o.brightness for o in self.observations], dtype=float)
        return aggregate_to_cells(self.observation_xy, vals, self.grid)

    def cell_data(self):
        """``(X, y)`` for the populated cells: centre, covariates -> mean brightness."""
        g = self.grid
        idx = np.array([c for c, _, _ in self.observed_cells], dtype=np.int64)
        y = np.array([m for _, m, _ in self.observed_cells])
        X = np.column_stack([g.centers[idx], g.covariates[idx]])
        return X, y

    def model_params(self) -> dict:
        c = self.config
        return dict(variogram_family=c["variogram_family"],
                    variogram_cutoff_km=c["variogram_cutoff_km"],
                    variogram_bins=c["variogram_bins"],
                    osm_column=motorway_column(c["osm_radius_km"]),
                    n_jobs=self.threads)

    def spec(self) -> ModelSpec:
        return ModelSpec(self.config["model_covariates"], self.config["model_kriging"])

    @cached_property
    def model(self) -> SpatialRegressor:
        X, y = self.cell_data()
        spec = self.spec()
        return SpatialRegressor(spec.covariates, spec.kriging,
                                feature_names=self.grid.covariate_names,
                                **self.model_params()).fit(X, y)

    @cached_property
    def skyglow(self) -> np.ndarray:
        c = self.config
        params = SkyglowParams(c["skyglow_exponent"], c["skyglow_min_km"], c["skyglow_cutoff_km"])
        return walker_skyglow(self.radiance, self.grid, params, self.projection,
                              n_jobs=self.threads)

    # --------------------------------------------------------------- outputs

    def _manifest(self, command: str, outputs: list[Path]) -> None:
        doc = {
            "command": command,
            "created": datetime.now(timezone.utc).isoformat(),
            "config": self.config.echo(),
            "config_sources": self.config.sources,
            "inputs": {k: {"path": str(p), "sha256": _sha256(p)}
                       for k, p in sorted(self.inputs_used.items())},
            "outputs": [p.name for p in outputs],
            "versions": _versions(),
        }
        path = self.output_dir / f"{command}.manifest.json"
        path.write_text(json.dumps(doc, indent=2, default=str) + "\n", encoding="utf-8")

    def enrich(self) -> list[Path]:
        out = self.output_dir
        g = self.grid
        paths = [out / "grid_covariates.csv", out / "observations_enriched.csv",
                 out / "cell_observations.csv"]
        write_grid(g, paths[0])
        table = enrich_points(self.observation_xy, self.lines, self.landcover,
                              self.kernel_config, self.zonal_config, self.projection,
                              self.threads)
        cells = points_to_cells(g, self.observation_xy)
        with open(paths[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lat", "lon", "brightness", "date", "x_km", "y_km", "cell_id",
                        *table.names])
            for o, xy, cell, cov in zip(self.observations, self.observation_xy, cells,
                                        table.values):
                w.writerow([format_float(o.location.lat), format_float(o.location.lon),
                            o.brightness, o.date or "", format_float(xy[0]),
                            format_float(xy[1]), int(cell) if cell >= 0 else "",
                            *[format_float(v) for v in cov]])
        with open(paths[2], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell_id", "mean_brightness", "count"])
            for idx, m, n in self.observed_cells:
                w.writerow([idx, format_float(m), n])
        self._manifest("enrich", paths)
        return paths

    def fit(self) -> list[Path]:
        out = self.output_dir
        m = self.model
        paths = [out / "model_summary.txt", out / "coefficients.csv"]
        with open(paths[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["term", "coefficient"])
            for name, b in zip(["intercept"] + m.drift_columns_, m.coef_):
                w.writerow([name, format_float(b)])
        spec = m.spec
        lines = [
            f"model {spec.model_id}: covariates={spec.covariates} kriging={str(spec.kriging).lower()}",
            f"data cells: {len(self.observed_cells)}",
            f"observations: {len(self.observations)}",
            f"drift columns: {', '.join(['intercept'] + m.drift_columns_)}",
            f"OLS residual variance: {format_float(m.residual_variance_)}",
        ]
        if m.variogram_ is not None:
            v = m.variogram_
            lines += [
                f"variogram family: {v.family}",
                f"variogram nugget: {format_float(v.nugget)}",
                f"variogram partial sill: {format_float(v.partial_sill)}",
                f"variogram range km: {format_float(v.range_km)}",
            ]
            emp = getattr(m, "empirical_variogram_", None)
            if emp is not None:
                lines.append(f"variogram WLS objective: {format_float(wls_objective(emp, v))}")
                p = out / "variogram_empirical.csv"
                with open(p, "w", newline="", encoding="utf-8") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["lag_km", "semivariance", "pairs", "model"])
                    for h, gam, n in zip(emp.lags, emp.gamma, emp.counts):
                        w.writerow([format_float(h), format_float(gam), int(n),
                                    format_float(v(h))])
                paths.append(p)
        paths[0].write_text("\n".join(lines) + "\n", encoding="utf-8")
        self._manifest("fit", paths)
        return paths

    def predicted_grid(self):
        return predict_grid(self.model, self.grid)

    def predict(self) -> list[Path]:
        out = self.output_dir
        g = self.predicted_grid()
        paths = [out / "predictions.csv"]
        geojson = None
        if self.config["write_geojson"]:
            geojson = out / "predictions.geojson"
            paths.append(geojson)
        write_grid(g, paths[0], geojson)
        self._manifest("predict", paths)
        return paths

    def validate(self) -> list[Path]:
        out = self.output_dir
        X, y = self.cell_data()
        reports = compare_models(ModelSpec.all(), X, y, self.grid, self.skyglow,
                                 observed=self.observed_cells,
                                 feature_names=self.grid.covariate_names,
                                 **self.model_params())
        paths = [out / "validation.csv", out / "validation.txt"]
        write_report_csv(reports, paths[0])
        paths[1].write_text(format_report_table(reports), encoding="utf-8")
        self._manifest("validate", paths)
        return paths

    def skyglow_map(self) -> list[Path]:
        out = self.output_dir
        g = self.grid
        sg = self.skyglow
        lonlat = g.lonlat()
        logs = np.full_like(sg, np.nan)
        ok = np.isfinite(sg)
        logs[ok] = log_skyglow(sg[ok])
        path = out / "skyglow.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell_id", "x_km", "y_km", "lon", "lat", "skyglow", "log_skyglow"])
            for i, (c, ll) in enumerate(zip(g.centers, lonlat)):
                w.writerow([i, format_float(c[0]), format_float(c[1]), format_float(ll[0]),
                            format_float(ll[1]), format_float(sg[i]), format_float(logs[i])])
        self._manifest("skyglow", [path])
        return [path]

    def infer(self) -> list[Path]:
        out = self.output_dir
        cells = points_to_cells(self.grid, self.observation_xy)
        raw = np.array([o.brightness for o in self.observations], dtype=float)[cells >= 0]
        results = {
            "observed": observed_mean(raw),
            "state": state_mean(self.predicted_grid(), self.observed_cells),
        }
        path = out / "inference.csv"
        write_inference_csv(results, path)
        self._manifest("infer", [path])
        return [path]


def simulate_inputs(config: PipelineConfig) -> list[Path]:
    """Write a synthetic study area and a matching config into ``output_dir``."""
    out = config.path("output_dir")
    out.mkdir(parents=True, exist_ok=True)
    seed = int(config["seed"])
    sc = make_scenario(seed, n_side=config["sim_n_side"], cell_size_km=config["cell_size_km"],
                       kernel=KernelConfig(config["kernel_radii_km"], config["kernel_truncation"],
                                           config["line_step_km"]),
                       zonal=ZonalConfig(config["landcover_area_km2"]),
                       n_jobs=max(1, config["threads"]))
    g = sc.grid
    osm = g.covariate(motorway_column(config["osm_radius_km"])) if (
        motorway_column(config["osm_radius_km"]) in g.covariate_names) else np.zeros(g.n_cells)
    drift = np.column_stack([np.ones(g.n_cells), sc.developed_share(), osm])
    beta = np.array([5.0, -6.0, -0.05])
    vgm = VariogramModel("exponential", 0.0, 0.3, 30.0)
    truth = simulate_gp_field(SimConfig(seed, g, beta, vgm, np.ones(g.n_cells), 1, drift))
    z = (truth - truth.mean()) / truth.std()
    cfg = SimConfig(seed, g, beta, vgm, np.exp(1.5 * z), config["sim_n_samples"], drift,
                    config["sim_noise_sd"])
    locs, vals = biased_sample(truth, cfg)
    lon, lat = inverse_project_xy(locs[:, 0], locs[:, 1], sc.projection)
    # the observation format holds integers on the 0-7 scale
    obs = [Observation(GeoPoint(float(a), float(b)), int(np.clip(np.rint(v), 0, 7)))
           for a, b, v in zip(lon, lat, vals)]

    paths = {
        "boundary": out / "boundary.geojson",
        "motorways": out / "motorways.geojson",
        "landcover": out / "landcover.asc",
        "radiance": out / "radiance.asc",
        "observations": out / "observations.csv",
        "truth": out / "truth.csv",
        "config": out / "config.txt",
    }
    write_boundary(sc.boundary_lonlat, paths["boundary"])
    write_polylines(sc.lines, paths["motorways"])
    write_raster(sc.landcover, paths["landcover"])
    write_raster(sc.radiance, paths["radiance"])
    write_observations(obs, paths["observations"])
    write_grid(g.with_predictions(truth, None), paths["truth"])
    cfg_lines = [
        "# synthetic study area written by `geobias simulate`",
        f"# true area mean: {format_float(float(truth.mean()))}",
        "observations = observations.csv",
        "boundary = boundary.geojson",
        "motorways = motorways.geojson",
        "landcover = landcover.asc",
        "radiance = radiance.asc",
        "output_dir = results",
        f"seed = {seed}",
        f"cell_size_km = {format_float(config['cell_size_km'])}",
        "landcover_units = deg",
        "radiance_units = deg",
    ]
    paths["config"].write_text("\n".join(cfg_lines) + "\n", encoding="utf-8")
    doc = {"command": "simulate", "created": datetime.now(timezone.utc).isoformat(),
           "config": config.echo(), "outputs": [p.name for p in paths.values()],
           "versions": _versions()}
    (out / "simulate.manifest.json").write_text(json.dumps(doc, indent=2, default=str) + "\n",
                                                encoding="utf-8")
    return list(paths.values())
