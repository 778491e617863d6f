"""Command-line entry point: ``geobias <command> [--config FILE] [options]``.

Commands: enrich, fit, predict, validate, skyglow, infer, simulate, all.
On failure the last line on stderr is a JSON object
``{"status": "error", "command": ..., "type": ..., "message": ...}`` and the
exit status is 1 (2 for usage errors).
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from collections import Counter

from .config import ConfigError, load_config
from .pipeline import Pipeline, simulate_inputs

COMMANDS = ("enrich", "fit", "predict", "validate", "skyglow", "infer", "simulate", "all")
PIPELINE_ORDER = ("enrich", "fit", "predict", "skyglow", "validate", "infer")


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geobias",
                                description="Spatial sampling-bias correction for geolocated observations.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("-c", "--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override a configuration key (repeatable; wins over the file)")
    p.add_argument("-o", "--output-dir", help="shorthand for --set output_dir=DIR")
    p.add_argument("--threads", type=int, help="worker threads; outputs do not depend on it")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            overrides = _parse_set(args.set)
            if args.output_dir is not None:
                overrides["output_dir"] = args.output_dir
            if args.threads is not None:
                overrides["threads"] = str(args.threads)
            if args.seed is not None:
                overrides["seed"] = str(args.seed)
            config = load_config(args.config, overrides)
            if command == "simulate":
                written = simulate_inputs(config)
            else:
                pipe = Pipeline(config)
                steps = PIPELINE_ORDER if command == "all" else (command,)
                written = []
                for step in steps:
                    method = "skyglow_map" if step == "skyglow" else step
                    written += getattr(pipe, method)()
        except Exception as exc:  # reported as one machine-readable line
            _summarize(caught)
            print(json.dumps({"status": "error", "command": command,
                              "type": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
            return 1
    for path in written:
        print(path)
    _summarize(caught)
    return 0


def _summarize(caught) -> None:
    if not caught:
        return
    counts = Counter(f"{w.category.__name__}: {w.message}" for w in caught)
    print(f"{sum(counts.values())} warning(s):", file=sys.stderr)
    for msg, n in counts.items():
        print(f"  {msg}" + (f" (x{n})" if n > 1 else ""), file=sys.stderr)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
