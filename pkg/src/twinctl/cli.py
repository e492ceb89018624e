"""Command-line front end.

``twinctl run`` runs a preset or config file, ``twinctl validate`` checks a
configuration without running it and ``twinctl selftest`` runs the oracle
suite. Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .controller import ConfigError, TwinStepError
from .harness import PRESETS, ExperimentPreset, _fresh_run_dir, discounted_cost, run_experiment

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

# Config-file keys mapped onto TwinConfig fields.
_TWIN_KEYS = {
    "seed": ("seed", int),
    "m": ("m", int),
    "n_steps": ("n_steps", int),
    "n_pseudo": ("n_pseudo", int),
    "dt": ("dt", float),
    "gamma": ("gamma", float),
    "epsilon": ("epsilon", float),
    "delta": ("bandwidth", float),
    "sigma_infl": ("sigma_infl", float),
}
_MODEL_KEYS = {"sigma", "r", "b", "rho", "sigma_friction"}
CONFIG_KEYS = sorted(
    set(_TWIN_KEYS) | _MODEL_KEYS
    | {"preset", "u_max", "alpha", "sigma_digital", "R", "x0", "init_var", "obs_interval"}
)


class CliError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class CliConfig:
    subcommand: str
    preset: Optional[ExperimentPreset] = None
    seeds: List[int] = field(default_factory=list)
    out_dir: Optional[Path] = None
    forced_out_dir: bool = False
    jobs: int = 1
    zero_control: bool = False
    settings: Dict[str, str] = field(default_factory=dict)


def read_config_file(path) -> Dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError("config", f"cannot read {path}: {exc.strerror}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise CliError(key, f"unknown key (line {lineno})")
        if not value:
            raise CliError(key, f"missing value (line {lineno})")
        values[key] = value
    return values


def _convert(key: str, value: str, kind):
    try:
        return kind(value)
    except ValueError:
        raise CliError(key, f"expected {kind.__name__}, got {value!r}") from None


def _vector(key: str, value: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in value.replace(",", " ").split()])
    except ValueError:
        raise CliError(key, f"expected a list of numbers, got {value!r}") from None


def _optional_float(key: str, value: str, keyword: str):
    if value.strip().lower() == keyword:
        return None
    return _convert(key, value, float)


def build_preset(settings: Dict[str, str]) -> ExperimentPreset:
    """Apply string settings on top of the named preset and validate."""
    name = settings.get("preset", "lorenz63")
    if name not in PRESETS:
        raise CliError("preset", f"unknown preset {name!r} (choose from {', '.join(PRESETS)})")
    preset = PRESETS[name]()
    cfg_updates, params = {}, dict(preset.model_params)
    updates = {}
    for key, value in settings.items():
        if key == "preset":
            continue
        if key in _TWIN_KEYS:
            target, kind = _TWIN_KEYS[key]
            cfg_updates[target] = _convert(key, value, kind)
        elif key in _MODEL_KEYS:
            if key not in params:
                raise CliError(key, f"not a parameter of the {name} model")
            params[key] = _convert(key, value, float)
        elif key == "u_max":
            cfg_updates["u_max"] = _optional_float(key, value, "none")
        elif key == "alpha":
            cfg_updates["alpha"] = "dt" if value.strip() == "dt" else _convert(key, value, float)
        elif key == "obs_interval":
            updates["obs_interval"] = _optional_float(key, value, "continuous")
        elif key in ("sigma_digital", "R", "init_var"):
            field_name = {"R": "obs_noise"}.get(key, key)
            number = _convert(key, value, float)
            if number < 0 or (key == "R" and number == 0):
                raise CliError(key, f"must be {'> 0' if key == 'R' else '>= 0'}, got {number}")
            updates[field_name] = number
        elif key == "x0":
            x0 = _vector(key, value)
            if x0.size != preset.x0.size:
                raise CliError(key, f"expected {preset.x0.size} components, got {x0.size}")
            updates["x0"] = x0
            updates["init_mean"] = x0
    if "obs_interval" in updates and updates["obs_interval"] is not None and updates["obs_interval"] <= 0:
        raise CliError("obs_interval", "must be > 0 or 'continuous'")
    preset = replace(preset, config=replace(preset.config, **cfg_updates), model_params=params, **updates)
    try:
        preset.config.validate()
    except ConfigError as exc:
        key = {"bandwidth": "delta"}.get(exc.key, exc.key)
        raise CliError(key, str(exc).split(": ", 1)[1]) from None
    return preset


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinctl", description="Digital-twin control experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_run_options(p):
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--config", help="flat 'key = value' config file")
        p.add_argument("--seed", help="seed, or comma-separated seeds for a sweep")
        p.add_argument("--m", type=int)
        p.add_argument("--umax", help="control bound, or 'none'")
        p.add_argument("--n-steps", "--n_steps", dest="n_steps", type=int)

    run = sub.add_parser("run", help="run an experiment and write run.csv")
    add_run_options(run)
    run.add_argument("--out-dir", "--out_dir", dest="out_dir",
                     help="write exactly here instead of a fresh timestamped directory")
    run.add_argument("--jobs", type=int, default=1, help="parallel runs for a seed sweep")
    run.add_argument("--zero-control", action="store_true", help="run with the control held at zero")
    run.add_argument("-v", "--verbose", action="store_true")

    validate = sub.add_parser("validate", help="check a configuration and print it")
    add_run_options(validate)

    sub.add_parser("selftest", help="run the numerical oracle suite")
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> CliConfig:
    """Parse and validate arguments; raises :class:`CliError` on bad configuration."""
    args = _build_parser().parse_args(argv)
    if args.subcommand == "selftest":
        return CliConfig("selftest")

    settings = read_config_file(args.config) if args.config else {}
    if args.preset:
        settings["preset"] = args.preset
    seeds = None
    if args.seed is not None:
        parts = [s for s in args.seed.split(",") if s.strip()]
        seeds = [_convert("seed", s.strip(), int) for s in parts]
        if not seeds:
            raise CliError("seed", "no seed given")
        settings["seed"] = str(seeds[0])
    if args.m is not None:
        settings["m"] = str(args.m)
    if args.umax is not None:
        settings["u_max"] = args.umax
    if args.n_steps is not None:
        settings["n_steps"] = str(args.n_steps)
    preset = build_preset(settings)
    if seeds is None:
        seeds = [preset.config.seed]

    cfg = CliConfig(args.subcommand, preset=preset, seeds=seeds, settings=settings)
    if args.subcommand == "run":
        if args.jobs < 1:
            raise CliError("jobs", f"must be >= 1, got {args.jobs}")
        cfg.jobs = args.jobs
        cfg.zero_control = args.zero_control
        if args.out_dir is not None:
            cfg.out_dir, cfg.forced_out_dir = Path(args.out_dir), True
        else:
            cfg.out_dir = Path(os.environ.get("TWINCTL_OUT", "runs"))
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(message)s")
    return cfg


def _config_echo(preset: ExperimentPreset, zero_control: bool) -> dict:
    echo = {
        "preset": preset.name,
        "model_params": preset.model_params,
        "sigma_digital": preset.sigma_digital,
        "R": preset.obs_noise,
        "obs_rows": preset.obs_rows.tolist(),
        "obs_interval": preset.obs_interval,
        "x0": preset.x0.tolist(),
        "init_var": preset.init_var,
        "zero_control": zero_control,
    }
    echo.update(preset.config.as_dict())
    return echo


def _run_one(preset: ExperimentPreset, out_dir: Path, forced: bool, zero_control: bool):
    """Run one seed; returns ``(seed, out_dir, final_rmse, cost, error_message)``."""
    label = f"{preset.name}-seed{preset.config.seed}"
    target = out_dir if forced else _fresh_run_dir(out_dir, label)
    target.mkdir(parents=True, exist_ok=True)
    (target / "config.json").write_text(json.dumps(_config_echo(preset, zero_control), indent=2) + "\n")
    try:
        record = run_experiment(preset, zero_control=zero_control, out_dir=target,
                                progress_every=10_000)
    except TwinStepError as exc:
        return preset.config.seed, target, None, None, str(exc)
    return preset.config.seed, target, float(record.rmse[-1]), discounted_cost(record), None


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = parse_args(argv)
    except CliError as exc:
        print(f"twinctl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if cfg.subcommand == "selftest":
        from .selftest import run_selftest

        results = run_selftest()
        failed = [r.name for r in results if not r.passed]
        print(f"selftest: {len(results) - len(failed)}/{len(results)} oracles passed")
        return EXIT_RUNTIME if failed else EXIT_OK

    if cfg.subcommand == "validate":
        print(json.dumps(_config_echo(cfg.preset, False), indent=2))
        print("configuration ok")
        return EXIT_OK

    presets = [cfg.preset.with_overrides(seed=s) for s in cfg.seeds]
    if cfg.forced_out_dir and len(presets) > 1:
        dirs = [cfg.out_dir / f"seed{s}" for s in cfg.seeds]
    else:
        dirs = [cfg.out_dir] * len(presets)
    forced = cfg.forced_out_dir
    jobs = [(p, d, forced, cfg.zero_control) for p, d in zip(presets, dirs)]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_run_one, *zip(*jobs)))
    else:
        outcomes = [_run_one(*job) for job in jobs]

    status = EXIT_OK
    for seed, target, final_rmse, cost, error in outcomes:
        if error is not None:
            print(f"seed {seed}: runtime failure at {error} (partial output in {target})", file=sys.stderr)
            status = EXIT_RUNTIME
        else:
            print(f"seed {seed}: final RMSE {final_rmse:.6g}  total discounted cost {cost:.6g}  -> {target}")
    return status


if __name__ == "__main__":
    sys.exit(main())
