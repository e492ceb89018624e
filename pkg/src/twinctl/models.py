"""Controlled dynamical systems.

Every model function is batch-friendly: it accepts a single state of shape
``(d_x,)`` or a stack of states ``(..., d_x)`` and returns matching leading
dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Dict

import numpy as np


@dataclass(frozen=True)
class ControlledModel:
    """Drift ``b``, control matrix ``G``, running cost ``c`` and their derivatives.

    ``diffusion`` is the digital twin's (artificial) diffusion matrix; the
    physical twin may be stepped with a different one.
    """

    name: str
    d_x: int
    d_u: int
    drift: Callable[[np.ndarray], np.ndarray]
    drift_jacobian: Callable[[np.ndarray], np.ndarray]
    control_matrix: Callable[[np.ndarray], np.ndarray]
    controlled_drift_jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray]
    running_cost: Callable[[np.ndarray], np.ndarray]
    cost_gradient: Callable[[np.ndarray], np.ndarray]
    diffusion: np.ndarray
    params: Dict[str, float]

    def controlled_drift(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        G = self.control_matrix(x)
        return self.drift(x) + np.einsum("...ij,j->...i", G, np.asarray(u, dtype=float))

    def with_diffusion(self, diffusion) -> "ControlledModel":
        return replace(self, diffusion=_check_diffusion(diffusion, self.d_x))


def _check_diffusion(diffusion, d_x: int) -> np.ndarray:
    diffusion = np.atleast_2d(np.asarray(diffusion, dtype=float))
    if diffusion.shape != (d_x, d_x):
        raise ValueError(f"diffusion must be {d_x}x{d_x}, got {diffusion.shape}")
    if not np.allclose(diffusion, diffusion.T):
        raise ValueError("diffusion must be symmetric")
    if np.linalg.eigvalsh(diffusion).min() < -1e-12:
        raise ValueError("diffusion must be positive semidefinite")
    return diffusion


def lorenz63_model(sigma=10.0, r=28.0, b=8.0 / 3.0, rho=5000.0, diffusion=None) -> ControlledModel:
    """Lorenz-63 with scalar control on the first component.

    The running cost ``(rho/2) min(x_1, 0)^2`` penalises negative first
    components; its gradient at the kink ``x_1 = 0`` is taken as 0.
    """
    if diffusion is None:
        diffusion = np.zeros((3, 3))

    def drift(x):
        x = np.asarray(x, dtype=float)
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return np.stack(
            [sigma * (x2 - x1), -x1 * x3 + r * x1 - x2, x1 * x2 - b * x3], axis=-1
        )

    def drift_jacobian(x):
        x = np.asarray(x, dtype=float)
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 0, 0] = -sigma
        J[..., 0, 1] = sigma
        J[..., 1, 0] = r - x3
        J[..., 1, 1] = -1.0
        J[..., 1, 2] = -x1
        J[..., 2, 0] = x2
        J[..., 2, 1] = x1
        J[..., 2, 2] = -b
        return J

    G = np.array([[1.0], [0.0], [0.0]])

    def control_matrix(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(G, x.shape[:-1] + (3, 1)).copy()

    def controlled_drift_jacobian(x, u):
        # G is constant, so the control adds nothing to the Jacobian.
        return drift_jacobian(x)

    def running_cost(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * rho * np.minimum(x[..., 0], 0.0) ** 2

    def cost_gradient(x):
        x = np.asarray(x, dtype=float)
        grad = np.zeros_like(x)
        grad[..., 0] = rho * np.minimum(x[..., 0], 0.0)
        return grad

    return ControlledModel(
        name="lorenz63",
        d_x=3,
        d_u=1,
        drift=drift,
        drift_jacobian=drift_jacobian,
        control_matrix=control_matrix,
        controlled_drift_jacobian=controlled_drift_jacobian,
        running_cost=running_cost,
        cost_gradient=cost_gradient,
        diffusion=_check_diffusion(diffusion, 3),
        params={"sigma": sigma, "r": r, "b": b, "rho": rho},
    )


def pendulum_model(sigma_friction=2.0, rho=500.0, diffusion=None) -> ControlledModel:
    """Inverted pendulum with friction, state ``(theta, v)``.

    The control enters through ``G(x) = (0, cos theta)^T`` so the controlled
    Jacobian picks up ``-sin(theta) u`` in its (v, theta) entry. ``theta`` is
    not wrapped.
    """
    if diffusion is None:
        diffusion = np.zeros((2, 2))

    def drift(x):
        x = np.asarray(x, dtype=float)
        theta, v = x[..., 0], x[..., 1]
        return np.stack([v, -np.sin(theta) - sigma_friction * v], axis=-1)

    def drift_jacobian(x):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -np.cos(x[..., 0])
        J[..., 1, 1] = -sigma_friction
        return J

    def control_matrix(x):
        x = np.asarray(x, dtype=float)
        G = np.zeros(x.shape[:-1] + (2, 1))
        G[..., 1, 0] = np.cos(x[..., 0])
        return G

    def controlled_drift_jacobian(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float).reshape(-1)
        J = drift_jacobian(x)
        J[..., 1, 0] -= np.sin(x[..., 0]) * u[0]
        return J

    def running_cost(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * rho * ((x[..., 0] - np.pi) ** 2 + x[..., 1] ** 2)

    def cost_gradient(x):
        x = np.asarray(x, dtype=float)
        return rho * np.stack([x[..., 0] - np.pi, x[..., 1]], axis=-1)

    return ControlledModel(
        name="pendulum",
        d_x=2,
        d_u=1,
        drift=drift,
        drift_jacobian=drift_jacobian,
        control_matrix=control_matrix,
        controlled_drift_jacobian=controlled_drift_jacobian,
        running_cost=running_cost,
        cost_gradient=cost_gradient,
        diffusion=_check_diffusion(diffusion, 2),
        params={"sigma_friction": sigma_friction, "rho": rho},
    )


MODELS: Dict[str, Callable[..., ControlledModel]] = {
    "lorenz63": lorenz63_model,
    "pendulum": pendulum_model,
}


def register_model(name: str, factory: Callable[..., ControlledModel]) -> None:
    MODELS[name] = factory


def numeric_jacobian(f, x, h=1e-4) -> np.ndarray:
    """Central-difference Jacobian of ``f: R^n -> R^m`` at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)
