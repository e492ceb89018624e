"""Ensemble Kalman-Bucy innovations and the mollified discrete EnKF update."""

from __future__ import annotations

import numpy as np

from .ensemble import empirical_cross_cov, inflated_state_cov
from .observation import ObservationModel


def _gain_and_predictions(states, obs_model: ObservationModel, sigma_infl: float):
    """Kalman gain ``C^{xh} R^{-1}`` plus ``h(X^{(i)})`` and ``m^h``.

    For a linear forward map the cross covariance is ``(C^{xx} + sigma I) H^T``.
    Nonlinear maps use the raw cross covariance and ignore ``sigma_infl``.
    """
    predictions = np.atleast_2d(obs_model.h(states))
    if predictions.shape[0] != states.shape[0]:
        predictions = predictions.reshape(states.shape[0], -1)
    if obs_model.linear_matrix is not None:
        cxh = inflated_state_cov(states, sigma_infl) @ obs_model.linear_matrix.T
    else:
        cxh = empirical_cross_cov(states, predictions)
    # R is symmetric, so C R^{-1} = (R^{-1} C^T)^T.
    gain = np.linalg.solve(obs_model.noise_cov, cxh.T).T
    return gain, predictions, predictions.mean(axis=0)


def kbf_innovation(states, obs_model: ObservationModel, dy, dt: float, sigma_infl: float = 0.0) -> np.ndarray:
    """Per-particle Kalman-Bucy increment over one step of length ``dt``.

    Returns an ``(M, d_x)`` array whose row ``i`` is
    ``K (dy - (h(X_i) + m^h) dt / 2)`` with ``K = C^{xh} R^{-1}``. The data
    increment ``dy`` is used as is; only the prediction part is scaled by
    ``dt``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    gain, pred, mean_pred = _gain_and_predictions(states, obs_model, sigma_infl)
    innov = np.asarray(dy, dtype=float) - 0.5 * (pred + mean_pred) * dt
    return innov @ gain.T


def enkf_assimilate(states, obs_model: ObservationModel, y_obs, n_pseudo: int = 10, sigma_infl: float = 0.0) -> np.ndarray:
    """Assimilate one discrete observation by pseudo-time integration.

    Integrates ``dX/ds = C^{xh} R^{-1} (y - (h(X) + m^h)/2)`` over ``s`` in
    ``[0, 1]`` with ``n_pseudo`` forward Euler steps, recomputing the gain
    (including inflation) at every step.

    Parameters
    ----------
    states : array-like, shape (M, d_x)
        Forecast ensemble.
    obs_model : ObservationModel
    y_obs : array-like, shape (d_y,)
    n_pseudo : int
        Number of pseudo-time steps.
    sigma_infl : float
        Additive inflation (linear forward maps only).

    Returns
    -------
    ndarray, shape (M, d_x)
        Analysis ensemble.
    """
    if n_pseudo < 1:
        raise ValueError("n_pseudo must be at least 1")
    x = np.array(states, dtype=float, ndmin=2)
    y = np.asarray(y_obs, dtype=float)
    ds = 1.0 / n_pseudo
    for _ in range(n_pseudo):
        gain, pred, mean_pred = _gain_and_predictions(x, obs_model, sigma_infl)
        x = x + ds * ((y - 0.5 * (pred + mean_pred)) @ gain.T)
    return x
