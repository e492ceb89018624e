"""Nadaraya-Watson reconstruction of the state-to-co-state map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PsiEstimator:
    """Kernel regression of co-states on states over one ensemble snapshot.

    Weights are ``exp(-|x - X_i|^2 / (2 bandwidth))`` in the plain Euclidean
    norm, normalised to sum to one.
    """

    states: np.ndarray
    costates: np.ndarray
    bandwidth: float

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.costates = np.atleast_2d(np.asarray(self.costates, dtype=float))
        if self.states.shape[0] != self.costates.shape[0]:
            raise ValueError("states and costates must have the same length")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    def weights(self, x) -> np.ndarray:
        """Normalised weights, shape ``(K, M)`` for queries of shape ``(K, d)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        # Centred Gram form; centring keeps the cancellation error at the
        # scale of the ensemble spread rather than of the coordinates.
        centre = self.states.mean(axis=0)
        q = x - centre
        s = self.states - centre
        dist2 = (q * q).sum(axis=1)[:, None] + (s * s).sum(axis=1)[None, :] - 2.0 * (q @ s.T)
        np.maximum(dist2, 0.0, out=dist2)
        logw = dist2 / (-2.0 * self.bandwidth)
        # Shifting by the max keeps the nearest particle at weight exp(0).
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        total = w.sum(axis=1, keepdims=True)
        bad = ~np.isfinite(total[:, 0]) | (total[:, 0] <= 0)
        if np.any(bad):
            # Underflow fallback: nearest particle gets all the weight.
            nearest = np.argmin(dist2, axis=1)
            w[bad] = 0.0
            w[bad, nearest[bad]] = 1.0
            total[bad] = 1.0
        return w / total

    def __call__(self, x) -> np.ndarray:
        return nw_estimate(self, x)


def nw_estimate(estimator: PsiEstimator, x) -> np.ndarray:
    """Evaluate the regression at one point ``(d,)`` or a batch ``(K, d)``."""
    x = np.asarray(x, dtype=float)
    out = estimator.weights(x) @ estimator.costates
    return out[0] if x.ndim == 1 else out


def nw_jacvec(estimator: PsiEstimator, x, d, dt_fd: float, psi_x=None) -> np.ndarray:
    """One-sided difference ``(psi(x + dt d) - psi(x)) / dt`` approximating ``D psi(x) d``.

    ``x`` and ``d`` may be single vectors or matching batches. ``psi_x`` may
    carry an already computed ``psi(x)``.
    """
    if dt_fd <= 0:
        raise ValueError("dt_fd must be positive")
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if psi_x is None:
        psi_x = nw_estimate(estimator, x)
    return (nw_estimate(estimator, x + dt_fd * d) - psi_x) / dt_fd


def nw_jacvecs(estimator: PsiEstimator, x, directions, dt_fd: float):
    """Batched :func:`nw_jacvec` for several direction batches at the same points.

    All ``psi`` evaluations share one kernel evaluation; returns a list with
    one ``(K, d)`` array per direction batch.
    """
    if dt_fd <= 0:
        raise ValueError("dt_fd must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = x.shape[0]
    queries = np.concatenate([x] + [x + dt_fd * np.atleast_2d(d) for d in directions])
    values = nw_estimate(estimator, queries)
    base = values[:k]
    return [(values[(j + 1) * k:(j + 2) * k] - base) / dt_fd for j in range(len(directions))]
