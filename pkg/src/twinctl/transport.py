"""Symmetric Sinkhorn coupling over the ensemble.

The coupling ``mu`` turns particle values into approximations of the score
drift (applied to states) and of the generator action (applied to
co-states).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

KERNEL_FLOOR = 1e-300


class SinkhornError(RuntimeError):
    """Raised when the scaling iteration does not reach the tolerance."""

    def __init__(self, residual: float, n_iter: int):
        super().__init__(
            f"Sinkhorn scaling did not converge after {n_iter} iterations "
            f"(residual {residual:.3e}); try a larger alpha"
        )
        self.residual = residual
        self.n_iter = n_iter


@dataclass
class Coupling:
    kernel: np.ndarray
    scaling: np.ndarray
    mu: np.ndarray
    alpha: float
    n_iter: int = 0
    residual: float = 0.0

    @property
    def size(self) -> int:
        return self.mu.shape[0]


_FACTOR_CACHE: dict = {}


def _metric_factor(diffusion: np.ndarray) -> np.ndarray:
    """``L`` with ``Sigma^{-1} = L L^T``, so ``|x|^2_Sigma = |L^T x|^2``."""
    key = (diffusion.shape, diffusion.tobytes())
    L = _FACTOR_CACHE.get(key)
    if L is None:
        L = np.linalg.cholesky(np.linalg.inv(diffusion))
        if len(_FACTOR_CACHE) > 64:
            _FACTOR_CACHE.clear()
        _FACTOR_CACHE[key] = L
    return L


def gaussian_kernel(states, diffusion, alpha: float) -> np.ndarray:
    """``exp(-|x_i - x_j|^2_Sigma / (2 alpha))`` with ``|x|^2_Sigma = x^T Sigma^{-1} x``."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    z = states @ _metric_factor(np.atleast_2d(np.asarray(diffusion, dtype=float)))
    sq = np.sum(z * z, axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (z @ z.T), 0.0)
    np.fill_diagonal(dist2, 0.0)
    return np.maximum(np.exp(-dist2 / (2.0 * alpha)), KERNEL_FLOOR)


def sinkhorn_coupling(
    states,
    diffusion,
    alpha: float,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    v0: Optional[np.ndarray] = None,
) -> Coupling:
    """Scale the Gaussian kernel to a doubly stochastic matrix.

    Finds ``v > 0`` with ``v_i (D v)_i = 1`` by the damped fixed point
    ``v <- sqrt(v / (D v))`` and returns
    ``mu = (diag(v) D diag(v) - I) / alpha``, whose rows and columns sum to
    zero.

    Parameters
    ----------
    states : array-like, shape (M, d_x)
    diffusion : array-like, shape (d_x, d_x)
        Positive definite matrix defining the kernel metric.
    alpha : float
        Regularization (kernel bandwidth), must be positive.
    tol : float
        Stop once ``max_i |v_i (D v)_i - 1| <= tol``.
    max_iter : int
    v0 : array-like, optional
        Starting scaling. Defaults to all ones. The fixed point is unique,
        so a warm start from the previous step only changes the iteration
        count.

    Raises
    ------
    SinkhornError
        If the residual is still above ``tol`` after ``max_iter`` iterations.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    D = gaussian_kernel(states, diffusion, alpha)
    M = D.shape[0]
    v = np.ones(M) if v0 is None else np.array(v0, dtype=float)
    if v.shape != (M,) or np.any(v <= 0):
        v = np.ones(M)
    Dv = D @ v
    residual = np.max(np.abs(v * Dv - 1.0))
    n_iter = 0
    while residual > tol:
        if n_iter >= max_iter:
            raise SinkhornError(residual, n_iter)
        v = np.sqrt(v / Dv)
        Dv = D @ v
        residual = np.max(np.abs(v * Dv - 1.0))
        n_iter += 1
    mu = (v[:, None] * D * v[None, :] - np.eye(M)) / alpha
    return Coupling(kernel=D, scaling=v, mu=mu, alpha=alpha, n_iter=n_iter, residual=residual)


def apply_coupling(coupling: Coupling, values) -> np.ndarray:
    """Row ``i`` of the result is ``sum_j mu_ij values_j``."""
    values = np.asarray(values, dtype=float)
    flat = values.ndim == 1
    values = values[:, None] if flat else values
    if values.shape[0] != coupling.size:
        raise ValueError(f"expected {coupling.size} values, got {values.shape[0]}")
    out = coupling.mu @ values
    return out[:, 0] if flat else out
