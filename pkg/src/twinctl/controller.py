"""McKean-Pontryagin digital twin: joint state / co-state particle stepper.

One call to :func:`step` advances every particle by a forward Euler step of
the coupled system

    dX_i/dt = b(X_i) + G(X_i) U - sum_j mu_ij X_j + K (dY/dt - (h(X_i) + m^h)/2)
    eps dP_i/dt = -gamma P_i + (D_x(b + G U))^T P_i + grad c(X_i) + sum_j mu_ij P_j
                  + (1 + eps) Dpsi(X_i) dX_i/dt - Dpsi(X_i) K (dY/dt - (h(X_i) + m^h)/2)

with the open-loop control ``U = -(1/M) sum_i G(X_i)^T P_i``. Every shared
quantity (``mu``, ``U``, ``m^h``, the gain, ``psi``) is computed once from
the pre-step snapshot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Optional, Union

import numpy as np

from .enkf import enkf_assimilate, kbf_innovation
from .ensemble import Ensemble
from .models import ControlledModel
from .observation import ObservationModel
from .regression import PsiEstimator, nw_jacvec, nw_jacvecs
from .transport import Coupling, apply_coupling, sinkhorn_coupling

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class TwinStepError(RuntimeError):
    """A step produced non-finite values or a submodule failed."""

    def __init__(self, step_index, message, diagnostics=None, snapshot=None):
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index
        self.diagnostics = diagnostics
        self.snapshot = snapshot


@dataclass
class TwinConfig:
    gamma: float
    epsilon: float = 1.0
    bandwidth: float = 1.0
    alpha: Union[float, str] = 0.1
    sigma_infl: float = 0.0
    u_max: Optional[float] = None
    dt: float = 1e-3
    m: int = 100
    n_steps: int = 1000
    seed: int = 0
    n_pseudo: int = 10
    fd_step: Optional[float] = None
    sinkhorn_tol: float = 1e-10
    sinkhorn_max_iter: int = 10_000

    def validate(self) -> "TwinConfig":
        positive = ("gamma", "epsilon", "bandwidth", "dt", "sinkhorn_tol")
        for key in positive:
            value = getattr(self, key)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(key, f"must be > 0, got {value}")
        if self.m < 1:
            raise ConfigError("m", f"ensemble size must satisfy m >= 1, got {self.m}")
        if self.n_steps < 0:
            raise ConfigError("n_steps", f"must be >= 0, got {self.n_steps}")
        if self.n_pseudo < 1:
            raise ConfigError("n_pseudo", f"must be >= 1, got {self.n_pseudo}")
        if self.sinkhorn_max_iter < 1:
            raise ConfigError("sinkhorn_max_iter", "must be >= 1")
        if not np.isfinite(self.sigma_infl) or self.sigma_infl < 0:
            raise ConfigError("sigma_infl", f"must be >= 0, got {self.sigma_infl}")
        if self.u_max is not None and (np.isnan(self.u_max) or self.u_max < 0):
            raise ConfigError("u_max", f"must be >= 0 or unset, got {self.u_max}")
        if isinstance(self.alpha, str):
            if self.alpha != "dt":
                raise ConfigError("alpha", f"must be a positive number or 'dt', got {self.alpha!r}")
        elif not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ConfigError("alpha", f"must be > 0, got {self.alpha}")
        if self.fd_step is not None and self.fd_step <= 0:
            raise ConfigError("fd_step", f"must be > 0, got {self.fd_step}")
        return self

    @property
    def alpha_value(self) -> float:
        return self.dt if self.alpha == "dt" else float(self.alpha)

    @property
    def fd_value(self) -> float:
        return self.dt if self.fd_step is None else float(self.fd_step)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class StepDiagnostics:
    control: np.ndarray
    mean_state: np.ndarray
    mean_obs: np.ndarray
    score_norm: float
    psi_jacvec_norm: float
    sinkhorn_iters: int

    def is_finite(self) -> bool:
        parts = [self.control, self.mean_state, self.mean_obs, [self.score_norm, self.psi_jacvec_norm]]
        return all(np.all(np.isfinite(p)) for p in parts)


def _rms(rows) -> float:
    rows = np.atleast_2d(rows)
    return float(np.sqrt(np.mean(np.sum(rows * rows, axis=1))))


def compute_control(ensemble: Ensemble, model: ControlledModel, u_max=None) -> np.ndarray:
    """Open-loop control ``-(1/M) sum_i G(X_i)^T P_i``, clipped to ``[-u_max, u_max]``."""
    G = model.control_matrix(ensemble.states)
    u = -np.einsum("mij,mi->j", G, ensemble.costates) / ensemble.size
    if u_max is not None:
        u = np.clip(u, -u_max, u_max)
    return u


def state_rhs(i, ensemble, model, control, score_i, innovation_i, dt) -> np.ndarray:
    """Rate of change of particle ``i``.

    ``innovation_i`` is the filter increment over the whole step and is
    divided by ``dt`` here, so ``dt * state_rhs`` reproduces the Euler update.
    """
    x = ensemble.states[i]
    return model.controlled_drift(x, control) - score_i + np.asarray(innovation_i) / dt


def costate_rhs(
    i,
    ensemble,
    model,
    control,
    x_dot_i,
    innovation_i,
    coupled_costates_i,
    psi: PsiEstimator,
    epsilon,
    gamma,
    dt,
    fd_step=None,
) -> np.ndarray:
    """Rate of change of co-state ``i`` (already divided by ``epsilon``)."""
    fd = dt if fd_step is None else fd_step
    x = ensemble.states[i]
    p = ensemble.costates[i]
    jac = model.controlled_drift_jacobian(x, control)
    rhs = (
        -gamma * p
        + jac.T @ p
        + model.cost_gradient(x)
        + coupled_costates_i
        + (1.0 + epsilon) * nw_jacvec(psi, x, x_dot_i, fd)
        - nw_jacvec(psi, x, np.asarray(innovation_i) / dt, fd)
    )
    return rhs / epsilon


def observation_increment(
    states, obs_model: ObservationModel, config: TwinConfig, data
) -> np.ndarray:
    """Filter increment for one step: Kalman-Bucy for continuous data, the
    mollified EnKF impulse when a discrete observation arrives, else zero."""
    if data is None:
        return np.zeros_like(states)
    if obs_model.continuous:
        return kbf_innovation(states, obs_model, data, config.dt, config.sigma_infl)
    analysis = enkf_assimilate(states, obs_model, data, config.n_pseudo, config.sigma_infl)
    return analysis - states


def step(
    ensemble: Ensemble,
    model: ControlledModel,
    obs_model: Optional[ObservationModel],
    config: TwinConfig,
    data=None,
    v0=None,
    step_index=None,
):
    """Advance the digital twin by one Euler step.

    Parameters
    ----------
    ensemble : Ensemble
        Pre-step snapshot; not modified.
    model : ControlledModel
        Digital-twin model; its ``diffusion`` defines the Sinkhorn metric.
    obs_model : ObservationModel or None
    config : TwinConfig
    data : array-like or None
        Observation increment over the step (continuous mode), the
        observation arriving at this step (discrete mode), or ``None``.
    v0 : array-like, optional
        Warm start for the Sinkhorn scaling.
    step_index : int, optional
        Only used to label errors.

    Returns
    -------
    (Ensemble, StepDiagnostics, Coupling)
    """
    dt = config.dt
    X = ensemble.states
    P = ensemble.costates
    where = step_index if step_index is not None else round(ensemble.time / dt)

    try:
        coupling = sinkhorn_coupling(
            X, model.diffusion, config.alpha_value,
            tol=config.sinkhorn_tol, max_iter=config.sinkhorn_max_iter, v0=v0,
        )
    except Exception as exc:
        raise TwinStepError(where, f"coupling failed: {exc}", snapshot=ensemble.copy()) from exc

    u = compute_control(ensemble, model, config.u_max)
    score = apply_coupling(coupling, X)
    coupled_p = apply_coupling(coupling, P)
    if obs_model is not None and data is not None:
        innovation = observation_increment(X, obs_model, config, data)
    else:
        innovation = np.zeros_like(X)
    mean_obs = (
        np.atleast_2d(obs_model.h(X)).mean(axis=0) if obs_model is not None else np.zeros(0)
    )

    drift = model.controlled_drift(X, u) - score
    x_dot = drift + innovation / dt

    psi = PsiEstimator(X, P, config.bandwidth)
    fd = config.fd_value
    jv_full, jv_innov = nw_jacvecs(psi, X, [x_dot, innovation / dt], fd)
    jac = model.controlled_drift_jacobian(X, u)
    p_dot = (
        -config.gamma * P
        + np.einsum("mji,mj->mi", jac, P)
        + model.cost_gradient(X)
        + coupled_p
        + (1.0 + config.epsilon) * jv_full
        - jv_innov
    ) / config.epsilon

    diagnostics = StepDiagnostics(
        control=u,
        mean_state=X.mean(axis=0),
        mean_obs=mean_obs,
        score_norm=_rms(score),
        psi_jacvec_norm=_rms(jv_full),
        sinkhorn_iters=coupling.n_iter,
    )
    new = Ensemble(X + dt * drift + innovation, P + dt * p_dot, ensemble.time + dt)
    if not (diagnostics.is_finite() and np.all(np.isfinite(new.states)) and np.all(np.isfinite(new.costates))):
        raise TwinStepError(where, "non-finite values", diagnostics, ensemble.copy())
    return new, diagnostics, coupling


class DigitalTwin:
    """Stateful wrapper around :func:`step` that warm-starts the Sinkhorn scaling."""

    def __init__(self, ensemble: Ensemble, model, obs_model, config: TwinConfig):
        self.ensemble = ensemble
        self.model = model
        self.obs_model = obs_model
        self.config = config.validate()
        self.n_steps_taken = 0
        self._scaling = None

    def control(self) -> np.ndarray:
        return compute_control(self.ensemble, self.model, self.config.u_max)

    def step(self, data=None) -> StepDiagnostics:
        self.ensemble, diag, coupling = step(
            self.ensemble, self.model, self.obs_model, self.config,
            data=data, v0=self._scaling, step_index=self.n_steps_taken,
        )
        self._scaling = coupling.scaling
        self.n_steps_taken += 1
        return diag
