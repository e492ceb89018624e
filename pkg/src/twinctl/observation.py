"""Noisy observations of the physical twin."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


def sqrtm_psd(A) -> np.ndarray:
    """Symmetric square root of a symmetric positive semidefinite matrix."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    w, V = np.linalg.eigh(A)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass
class ObservationModel:
    """Forward map ``h``, noise covariance ``R`` and the observation mode.

    ``interval`` is ``None`` for continuous-time observations and the spacing
    between observation times otherwise.
    """

    forward_map: Callable[[np.ndarray], np.ndarray]
    noise_cov: np.ndarray
    linear_matrix: Optional[np.ndarray] = None
    interval: Optional[float] = None
    noise_sqrt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        if not np.allclose(self.noise_cov, self.noise_cov.T):
            raise ValueError("noise covariance must be symmetric")
        if np.linalg.eigvalsh(self.noise_cov).min() <= 0:
            raise ValueError("noise covariance must be positive definite")
        if self.linear_matrix is not None:
            self.linear_matrix = np.atleast_2d(np.asarray(self.linear_matrix, dtype=float))
            if self.linear_matrix.shape[0] != self.noise_cov.shape[0]:
                raise ValueError("linear_matrix rows must match noise covariance")
        if self.interval is not None and self.interval <= 0:
            raise ValueError("observation interval must be positive")
        self.noise_sqrt = sqrtm_psd(self.noise_cov)

    @classmethod
    def linear(cls, H, noise_cov, interval=None) -> "ObservationModel":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        return cls(
            forward_map=lambda x: np.asarray(x, dtype=float) @ H.T,
            noise_cov=noise_cov,
            linear_matrix=H,
            interval=interval,
        )

    @property
    def d_y(self) -> int:
        return self.noise_cov.shape[0]

    @property
    def continuous(self) -> bool:
        return self.interval is None

    def h(self, x) -> np.ndarray:
        return np.asarray(self.forward_map(np.asarray(x, dtype=float)), dtype=float)

    def continuous_obs_increment(self, x_true, dt: float, rng) -> np.ndarray:
        """Increment ``h(x) dt + R^{1/2} dW`` over one grid step."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        xi = rng.standard_normal(self.d_y)
        return self.h(x_true) * dt + np.sqrt(dt) * (self.noise_sqrt @ xi)

    def discrete_obs(self, x_true, rng) -> np.ndarray:
        if self.continuous:
            raise RuntimeError("discrete_obs called on a continuous-time observation model")
        xi = rng.standard_normal(self.d_y)
        return self.h(x_true) + self.noise_sqrt @ xi
