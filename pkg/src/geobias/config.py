"""Pipeline configuration: ``key = value`` text files with ``#`` comments.

Precedence, lowest to highest: built-in defaults, config file, command-line
overrides. Unknown keys are rejected so typos never pass silently. Relative
input paths resolve against the config file's directory.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

__all__ = ["ConfigError", "KEYS", "PATH_KEYS", "PipelineConfig", "load_config", "parse_config_text"]


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _opt_float(s: str) -> Optional[float]:
    return None if s.strip().lower() in ("", "auto", "none") else float(s)


def _choice(*options) -> Callable[[str], str]:
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s
    return parse


def _str(s: str) -> str:
    return s.strip()


# key -> (parser, default); None default marks a required input path
KEYS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "observations": (_str, None),
    "boundary": (_str, None),
    "motorways": (_str, None),
    "landcover": (_str, None),
    "radiance": (_str, None),
    "enriched_grid": (_str, ""),
    "output_dir": (_str, "out"),
    "seed": (int, 0),
    "threads": (int, 1),
    "cell_size_km": (float, 5.0),
    "landcover_units": (_choice("deg", "km"), "deg"),
    "radiance_units": (_choice("deg", "km"), "deg"),
    "kernel_radii_km": (_floats, (1.0, 10.0, 25.0)),
    "kernel_truncation": (float, 3.0),
    "line_step_km": (float, 0.1),
    "landcover_area_km2": (float, 25.0),
    "osm_radius_km": (float, 10.0),
    "variogram_family": (_choice("spherical", "exponential", "gaussian"), "spherical"),
    "variogram_cutoff_km": (_opt_float, None),
    "variogram_bins": (int, 15),
    "model_covariates": (_choice("mean", "landuse", "osm", "combined"), "combined"),
    "model_kriging": (_bool, True),
    "skyglow_exponent": (float, 2.5),
    "skyglow_min_km": (float, 1.0),
    "skyglow_cutoff_km": (float, 100.0),
    "write_geojson": (_bool, True),
    "sim_n_side": (int, 30),
    "sim_n_samples": (int, 400),
    "sim_noise_sd": (float, 0.5),
}

PATH_KEYS = ("observations", "boundary", "motorways", "landcover", "radiance", "enriched_grid",
             "output_dir")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        raw[key] = value
    return raw


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)
    sources: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def path(self, key) -> Optional[Path]:
        v = self.values.get(key)
        if not v:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def require_path(self, key) -> Path:
        p = self.path(key)
        if p is None:
            raise ConfigError(f"config key '{key}' is required for this command")
        if key != "output_dir" and not p.exists():
            raise ConfigError(f"{key}: file not found: {p}")
        return p

    def echo(self) -> dict:
        out = {}
        for k in KEYS:
            v = self.values[k]
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


def load_config(path=None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (raw strings)."""
    values = {k: default for k, (_, default) in KEYS.items()}
    sources = {k: "default" for k in KEYS}
    base_dir = Path.cwd()
    layers = []
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
        layers.append((str(path), parse_config_text(text, str(path))))
        base_dir = path.resolve().parent
    if overrides:
        for k in overrides:
            if k not in KEYS:
                raise ConfigError(f"override: unknown key '{k}'")
        layers.append(("override", dict(overrides)))
    for source, raw in layers:
        for k, v in raw.items():
            parser = KEYS[k][0]
            if source == "override" and k in PATH_KEYS and v.strip():
                v = str(Path.cwd() / v.strip())  # command-line paths are cwd-relative
            try:
                values[k] = parser(v)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for '{k}': {exc}") from exc
            sources[k] = source
    return PipelineConfig(values, base_dir, sources)
