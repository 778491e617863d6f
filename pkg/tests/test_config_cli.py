import json
import math

import numpy as np
import pytest

from geobias.cli import run
from geobias.config import ConfigError, load_config, parse_config_text
from geobias.io import read_grid
from geobias.metrics import read_inference_csv, read_report_csv


def test_parse_comments_and_blank_lines():
    raw = parse_config_text("# header\n\nseed = 4  # trailing\ncell_size_km=2.5\n")
    assert raw == {"seed": "4", "cell_size_km": "2.5"}


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"cfg:2: unknown key 'sede'"):
        parse_config_text("seed = 1\nsede = 2\n", "cfg")
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config_text("seed 1\n")


def test_precedence(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("seed = 3\nthreads = 2\nvariogram_family = exponential\n")
    c = load_config(cfg, {"threads": "8"})
    assert c["seed"] == 3 and c["threads"] == 8
    assert c["variogram_family"] == "exponential"
    assert c["cell_size_km"] == 5.0
    assert c.sources["threads"] == "override" and c.sources["cell_size_km"] == "default"


def test_paths_resolve(tmp_path, monkeypatch):
    sub = tmp_path / "sub"
    sub.mkdir()
    cfg = sub / "c.txt"
    cfg.write_text("observations = obs.csv\n")
    monkeypatch.chdir(tmp_path)
    c = load_config(cfg, {"boundary": "b.geojson"})
    assert c.path("observations") == sub / "obs.csv"
    assert c.path("boundary") == tmp_path / "b.geojson"
    with pytest.raises(ConfigError, match="file not found"):
        c.require_path("observations")
    with pytest.raises(ConfigError, match="required"):
        c.require_path("radiance")


def test_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="model_kriging"):
        load_config(None, {"model_kriging": "maybe"})
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(None, {"nope": "1"})
    assert load_config(None, {"variogram_cutoff_km": "auto"})["variogram_cutoff_km"] is None
    assert load_config(None, {"kernel_radii_km": "2, 5 9"})["kernel_radii_km"] == (2.0, 5.0, 9.0)


def _error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_cli_error_is_json(tmp_path, capsys):
    assert run(["fit", "-c", str(tmp_path / "missing.txt")]) == 1
    doc = _error_line(capsys)
    assert doc["status"] == "error" and doc["command"] == "fit"
    assert doc["type"] == "ConfigError" and "missing.txt" in doc["message"]


def test_cli_missing_input_named(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("observations = nowhere.csv\nboundary = b.geojson\n")
    assert run(["enrich", "-c", str(cfg)]) == 1
    assert "boundary" in _error_line(capsys)["message"]


def test_cli_usage_error():
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 2


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    d = tmp_path_factory.mktemp("study")
    assert run(["simulate", "-o", str(d), "--seed", "5", "--set", "sim_n_side=16",
                "--set", "sim_n_samples=250"]) == 0
    assert run(["all", "-c", str(d / "config.txt")]) == 0
    return d


def test_simulate_outputs(study):
    for name in ("boundary.geojson", "motorways.geojson", "landcover.asc", "radiance.asc",
                 "observations.csv", "truth.csv", "config.txt", "simulate.manifest.json"):
        assert (study / name).exists(), name


def test_pipeline_outputs(study):
    res = study / "results"
    for name in ("grid_covariates.csv", "observations_enriched.csv", "cell_observations.csv",
                 "model_summary.txt", "coefficients.csv", "predictions.csv",
                 "predictions.geojson", "skyglow.csv", "validation.csv", "validation.txt",
                 "inference.csv"):
        assert (res / name).exists(), name
    for cmd in ("enrich", "fit", "predict", "skyglow", "validate", "infer"):
        doc = json.loads((res / f"{cmd}.manifest.json").read_text())
        assert doc["command"] == cmd
        assert all(len(v["sha256"]) == 64 for v in doc["inputs"].values())


def test_validation_has_eight_rows_in_order(study):
    reports = read_report_csv(study / "results" / "validation.csv")
    assert [r.model.model_id for r in reports] == list(range(1, 9))
    assert all(math.isfinite(r.loocv_mse) for r in reports)


def test_inference_is_readable_and_corrects_bias(study):
    inf = read_inference_csv(study / "results" / "inference.csv")
    assert set(inf) >= {"observed", "state", "state_linear"}
    truth = read_grid(study / "truth.csv").prediction.mean()
    assert abs(inf["state"].mean - truth) < abs(inf["observed"].mean - truth)


def test_mean_model_map_is_constant(study, tmp_path):
    out = tmp_path / "mean"
    assert run(["predict", "-c", str(study / "config.txt"), "-o", str(out),
                "--set", "model_covariates=mean", "--set", "model_kriging=false",
                "--set", "write_geojson=false"]) == 0
    pred = read_grid(out / "predictions.csv").prediction
    assert np.ptp(pred) == 0.0
    assert not (out / "predictions.geojson").exists()
