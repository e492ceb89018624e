"""Ensemble containers and empirical statistics.

All covariances use the ``1/M`` normalization (not ``1/(M-1)``). This matters
for the tiny ensembles (``M = 3`` or ``4``) the presets run with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Ensemble:
    """Paired state / co-state particles of the digital twin.

    ``states`` and ``costates`` are arrays of shape ``(M, d_x)``.
    """

    states: np.ndarray
    costates: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.costates = np.atleast_2d(np.asarray(self.costates, dtype=float))
        if self.states.shape != self.costates.shape:
            raise ValueError(
                f"states {self.states.shape} and costates {self.costates.shape} differ"
            )
        if self.states.shape[0] < 1:
            raise ValueError("ensemble needs at least one particle")

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def copy(self) -> "Ensemble":
        return Ensemble(self.states.copy(), self.costates.copy(), self.time)


def _as_rows(vectors) -> np.ndarray:
    arr = np.asarray(vectors, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("expected a nonempty list of equal-length vectors")
    return arr


def empirical_mean(vectors) -> np.ndarray:
    return _as_rows(vectors).mean(axis=0)


def empirical_cross_cov(xs, ys) -> np.ndarray:
    """``(1/M) sum_i (x_i - m^x)(y_i - m^y)^T`` as a ``(d_x, d_y)`` matrix."""
    xs = _as_rows(xs)
    ys = _as_rows(ys)
    if xs.shape[0] != ys.shape[0]:
        raise ValueError(f"ensemble sizes differ: {xs.shape[0]} vs {ys.shape[0]}")
    dx = xs - xs.mean(axis=0)
    dy = ys - ys.mean(axis=0)
    return dx.T @ dy / xs.shape[0]


def inflated_state_cov(states, sigma_infl: float) -> np.ndarray:
    """Empirical state covariance with additive inflation ``sigma_infl * I``."""
    if sigma_infl < 0:
        raise ValueError("sigma_infl must be nonnegative")
    cov = empirical_cross_cov(states, states)
    return cov + sigma_infl * np.eye(cov.shape[0])
