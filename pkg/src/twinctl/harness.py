"""Physical twin / digital twin loop, experiment presets and run records."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .controller import DigitalTwin, TwinConfig, TwinStepError
from .ensemble import Ensemble
from .models import MODELS, ControlledModel
from .observation import ObservationModel, sqrtm_psd

log = logging.getLogger(__name__)

STREAMS = ("physical", "observation", "init")


@dataclass
class ExperimentPreset:
    """Everything needed to reproduce one experiment."""

    name: str
    model: str
    model_params: Dict[str, float]
    sigma_digital: float
    obs_rows: np.ndarray
    obs_noise: float
    config: TwinConfig
    x0: np.ndarray
    init_mean: np.ndarray
    init_var: float
    obs_interval: Optional[float] = None
    sigma_true: float = 0.0

    def __post_init__(self):
        self.obs_rows = np.atleast_2d(np.asarray(self.obs_rows, dtype=float))
        self.x0 = np.asarray(self.x0, dtype=float)
        self.init_mean = np.asarray(self.init_mean, dtype=float)

    def digital_model(self) -> ControlledModel:
        d = self.x0.size
        return MODELS[self.model](**self.model_params, diffusion=self.sigma_digital * np.eye(d))

    def physical_model(self) -> ControlledModel:
        d = self.x0.size
        return MODELS[self.model](**self.model_params, diffusion=self.sigma_true * np.eye(d))

    def observation_model(self) -> ObservationModel:
        d_y = self.obs_rows.shape[0]
        return ObservationModel.linear(self.obs_rows, self.obs_noise * np.eye(d_y), self.obs_interval)

    def with_overrides(self, **overrides) -> "ExperimentPreset":
        """Copy with TwinConfig fields (``seed``, ``m``, ``u_max``, ...) replaced."""
        cfg_names = set(self.config.as_dict())
        cfg = {k: v for k, v in overrides.items() if k in cfg_names}
        rest = {k: v for k, v in overrides.items() if k not in cfg_names}
        return replace(self, config=replace(self.config, **cfg), **rest)


def lorenz63_preset(m=100, u_max=100.0, seed=0, n_steps=100_000) -> ExperimentPreset:
    return ExperimentPreset(
        name="lorenz63",
        model="lorenz63",
        model_params={"sigma": 10.0, "r": 28.0, "b": 8.0 / 3.0, "rho": 5000.0},
        sigma_digital=0.5,
        obs_rows=np.eye(3)[:2],
        obs_noise=0.01,
        config=TwinConfig(
            gamma=10.0, epsilon=1.0, bandwidth=1.0, alpha=0.1, sigma_infl=0.2,
            u_max=u_max, dt=0.001, m=m, n_steps=n_steps, seed=seed,
        ),
        x0=np.array([7.8590, 7.1136, 27.2293]),
        init_mean=np.array([7.8590, 7.1136, 27.2293]),
        init_var=0.1,
    )


def pendulum_preset(m=3, u_max=None, seed=0, n_steps=100_000) -> ExperimentPreset:
    return ExperimentPreset(
        name="pendulum",
        model="pendulum",
        model_params={"sigma_friction": 2.0, "rho": 500.0},
        sigma_digital=0.1,
        obs_rows=np.array([[1.0, 0.0]]),
        obs_noise=0.01,
        config=TwinConfig(
            gamma=1.0, epsilon=1.0, bandwidth=0.1, alpha=0.1, sigma_infl=0.002,
            u_max=u_max, dt=0.001, m=m, n_steps=n_steps, seed=seed,
        ),
        x0=np.zeros(2),
        init_mean=np.zeros(2),
        init_var=0.1,
    )


PRESETS = {"lorenz63": lorenz63_preset, "pendulum": pendulum_preset}


def rng_streams(seed: int, overrides: Optional[Dict[str, int]] = None) -> Dict[str, np.random.Generator]:
    """Three independent generators split from one seed.

    ``overrides`` maps a stream name to its own seed, leaving the other
    streams untouched.
    """
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    streams = {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}
    for name, s in (overrides or {}).items():
        if name not in streams:
            raise KeyError(f"unknown rng stream {name!r}")
        streams[name] = np.random.default_rng(np.random.SeedSequence(s))
    return streams


def step_physical(model_true: ControlledModel, x_true, u, dt: float, rng=None) -> np.ndarray:
    """Euler-Maruyama step of the physical twin."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x_true, dtype=float)
    x_new = x + dt * model_true.controlled_drift(x, u)
    if np.any(model_true.diffusion):
        xi = rng.standard_normal(x.size)
        x_new = x_new + np.sqrt(dt) * (sqrtm_psd(model_true.diffusion) @ xi)
    return x_new


def rmse(x_true, mean_state) -> float:
    diff = np.asarray(x_true, dtype=float) - np.asarray(mean_state, dtype=float)
    return float(np.sqrt(np.sum(diff * diff) / diff.size))


@dataclass
class RunRecord:
    t: np.ndarray
    x_true: np.ndarray
    mean: np.ndarray
    u: np.ndarray
    rmse: np.ndarray
    inst_cost: np.ndarray
    disc_cost: np.ndarray
    gamma: float
    dt: float
    meta: Dict[str, object] = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def header(self):
        d = self.x_true.shape[1]
        du = self.u.shape[1]
        return (
            ["t"]
            + [f"x_true_{k + 1}" for k in range(d)]
            + [f"mean_{k + 1}" for k in range(d)]
            + [f"u_{k + 1}" for k in range(du)]
            + ["rmse", "inst_cost", "disc_cost"]
        )

    def rows(self):
        for n in range(len(self.t)):
            values = [self.t[n], *self.x_true[n], *self.mean[n], *self.u[n],
                      self.rmse[n], self.inst_cost[n], self.disc_cost[n]]
            yield [repr(float(v)) for v in values]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            writer.writerows(self.rows())
        return path

    @classmethod
    def from_csv(cls, path, gamma: float) -> "RunRecord":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        d = sum(h.startswith("x_true_") for h in header)
        du = sum(h.startswith("u_") for h in header)
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(
            t=t, x_true=data[:, 1:1 + d], mean=data[:, 1 + d:1 + 2 * d],
            u=data[:, 1 + 2 * d:1 + 2 * d + du], rmse=data[:, -3],
            inst_cost=data[:, -2], disc_cost=data[:, -1], gamma=gamma, dt=dt,
        )


def discounted_cost(record: RunRecord, gamma: Optional[float] = None) -> float:
    """Left-endpoint quadrature of the discounted cost over the record's intervals."""
    if len(record) == 0:
        raise ValueError("empty record")
    gamma = record.gamma if gamma is None else gamma
    t = record.t[:-1]
    return float(np.sum(np.exp(-gamma * t) * record.inst_cost[:-1]) * record.dt)


def initial_ensemble(preset: ExperimentPreset, rng) -> Ensemble:
    m = preset.config.m
    d = preset.init_mean.size
    states = preset.init_mean + np.sqrt(preset.init_var) * rng.standard_normal((m, d))
    return Ensemble(states, np.zeros((m, d)), 0.0)


def _fresh_run_dir(base, name: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(base)
    path = base / f"{name}-{stamp}"
    k = 1
    while path.exists():
        path = base / f"{name}-{stamp}-{k}"
        k += 1
    path.mkdir(parents=True)
    return path


def run_experiment(
    preset: ExperimentPreset,
    zero_control: bool = False,
    out_dir=None,
    stream_overrides: Optional[Dict[str, int]] = None,
    progress_every: int = 0,
) -> RunRecord:
    """Run the observe / assimilate-and-control / actuate loop.

    At step ``n`` an observation is taken from the current physical state, the
    digital twin assimilates it and computes ``U_n`` from its pre-step
    ensemble, and ``U_n`` drives the physical twin over the same interval.
    With ``zero_control`` the control is clipped to zero in both twins.

    If ``out_dir`` is given the record (complete or partial on failure) is
    written there as ``run.csv``.
    """
    cfg = preset.config.validate()
    if zero_control:
        cfg = replace(cfg, u_max=0.0)
    streams = rng_streams(cfg.seed, stream_overrides)
    digital = preset.digital_model()
    physical = preset.physical_model()
    obs = preset.observation_model()
    twin = DigitalTwin(initial_ensemble(preset, streams["init"]), digital, obs, cfg)

    n_steps, dt = cfg.n_steps, cfg.dt
    d, du = preset.x0.size, digital.d_u
    x_true = np.zeros((n_steps + 1, d))
    means = np.zeros((n_steps + 1, d))
    controls = np.zeros((n_steps + 1, du))
    obs_stride = None
    if not obs.continuous:
        obs_stride = max(1, int(round(obs.interval / dt)))

    x = preset.x0.copy()
    filled = 0
    error = None
    try:
        for n in range(n_steps):
            u = twin.control()
            x_true[n], means[n], controls[n] = x, twin.ensemble.states.mean(axis=0), u
            filled = n + 1
            if obs.continuous:
                data = obs.continuous_obs_increment(x, dt, streams["observation"])
            elif n > 0 and n % obs_stride == 0:
                data = obs.discrete_obs(x, streams["observation"])
            else:
                data = None
            twin.step(data)
            x = step_physical(physical, x, u, dt, streams["physical"])
            if not np.all(np.isfinite(x)):
                raise TwinStepError(n, "physical twin state is not finite")
            if progress_every and (n + 1) % progress_every == 0:
                log.info("%s step %d/%d  mean=%s", preset.name, n + 1, n_steps, means[n])
        x_true[n_steps], means[n_steps] = x, twin.ensemble.states.mean(axis=0)
        controls[n_steps] = twin.control()
        filled = n_steps + 1
    except TwinStepError as exc:
        error = exc

    record = _assemble(preset, cfg, physical, x_true[:filled], means[:filled], controls[:filled])
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        record.to_csv(out_dir / "run.csv")
        if error is not None and error.snapshot is not None:
            np.savez(out_dir / "failure.npz", states=error.snapshot.states,
                     costates=error.snapshot.costates, time=error.snapshot.time)
    if error is not None:
        raise error
    return record


def _assemble(preset, cfg, physical, x_true, means, controls) -> RunRecord:
    n = len(x_true)
    t = np.arange(n) * cfg.dt
    inst = physical.running_cost(x_true) + 0.5 * np.sum(controls * controls, axis=1)
    weighted = np.exp(-cfg.gamma * t) * inst * cfg.dt
    disc = np.concatenate([[0.0], np.cumsum(weighted)[:-1]]) if n else np.zeros(0)
    err = np.sqrt(np.sum((x_true - means) ** 2, axis=1) / max(x_true.shape[1], 1)) if n else np.zeros(0)
    return RunRecord(
        t=t, x_true=x_true, mean=means, u=controls, rmse=err,
        inst_cost=inst, disc_cost=disc, gamma=cfg.gamma, dt=cfg.dt,
        meta={"preset": preset.name},
    )
