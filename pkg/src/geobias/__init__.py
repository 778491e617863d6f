"""Correct spatial sampling bias in geolocated citizen-science observations.

Observations are enriched with land-cover and motorway covariates, modelled
with land-use regression and universal kriging on a regular prediction grid,
and summarised into bias-corrected area means.
"""
from .geo import GeoPoint, Grid, PlanarPoint, ProjectionSpec, build_grid, point_to_cell
from .io import Observation, PolylineSet, Raster
from .enrich import CovariateEnricher, KernelConfig, ZonalConfig, enrich_points
from .variogram import VariogramModel, empirical_variogram, fit_variogram
from .kriging import ModelSpec, SpatialRegressor, loocv, predict_grid, uk_fit, uk_predict
from .skyglow import SkyglowParams, walker_skyglow
from .metrics import compare_models, observed_mean, state_mean

__version__ = "0.1.0"

__all__ = [
    "GeoPoint", "PlanarPoint", "ProjectionSpec", "Grid", "build_grid", "point_to_cell",
    "Observation", "PolylineSet", "Raster",
    "CovariateEnricher", "KernelConfig", "ZonalConfig", "enrich_points",
    "VariogramModel", "empirical_variogram", "fit_variogram",
    "ModelSpec", "SpatialRegressor", "loocv", "predict_grid", "uk_fit", "uk_predict",
    "SkyglowParams", "walker_skyglow",
    "compare_models", "observed_mean", "state_mean",
]
