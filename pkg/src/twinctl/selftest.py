"""Independent numerical oracles used by ``twinctl selftest`` and the test suite.

Each check returns an :class:`OracleResult` holding the measured error and
the tolerance it was held to.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from scipy.integrate import solve_ivp

from .enkf import enkf_assimilate, kbf_innovation
from .models import lorenz63_model, numeric_jacobian, pendulum_model
from .observation import ObservationModel
from .transport import apply_coupling, sinkhorn_coupling


@dataclass
class OracleResult:
    name: str
    passed: bool
    error: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: error {self.error:.3e} (tol {self.tolerance:.1e}, "
            f"{self.seconds:.1f}s) {self.detail}".rstrip()
        )


def gaussian_score_error(d: int, scale: float, m: int = 5000, alpha: float = 0.05, seed: int = 0) -> float:
    """Ensemble-RMS relative error of the coupling score against ``-1/2 Sigma C^{-1}(x - m)``.

    Samples come from a Gaussian with a non-diagonal covariance ``C`` and the
    kernel metric is ``Sigma = scale * C``. In whitened coordinates this is an
    isotropic problem, so only the product ``alpha * scale`` matters.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    C = A @ A.T / d + np.eye(d)
    mean = rng.standard_normal(d)
    X = mean + rng.standard_normal((m, d)) @ np.linalg.cholesky(C).T
    sigma = scale * C
    coupling = sinkhorn_coupling(X, sigma, alpha)
    approx = apply_coupling(coupling, X)
    exact = -0.5 * (X - mean) @ np.linalg.solve(C, sigma).T
    return float(np.sqrt(np.mean(np.sum((approx - exact) ** 2, axis=1)) / np.mean(np.sum(exact**2, axis=1))))


# Metric scale per dimension, near the minimum of the bias/variance
# trade-off at M = 5000, alpha = 0.05.
SCORE_SCALES = {1: 4.0, 2: 6.0, 3: 9.0}


def kalman_update_errors(m: int = 10_000, seed: int = 7):
    """Deviation of the EnKF analysis from the exact scalar Kalman posterior, in MC standard errors."""
    m0, c0, r, y = 0.5, 1.0, 0.5, 1.8
    states = m0 + np.sqrt(c0) * np.random.default_rng(seed).standard_normal((m, 1))
    obs = ObservationModel.linear([[1.0]], [[r]], interval=1.0)
    out = enkf_assimilate(states, obs, [y], n_pseudo=50)
    m1 = m0 + c0 * (y - m0) / (c0 + r)
    c1 = c0 * r / (c0 + r)
    se_mean = np.sqrt(c1 / m) + np.sqrt(c0 / m) * r / (c0 + r)
    se_var = c1 * np.sqrt(2.0 / m)
    return abs(out.mean() - m1) / se_mean, abs(out.var() - c1) / se_var


def riccati_tracking_error(m: int = 10_000, seed: int = 3, n_steps: int = 4000, dt: float = 1e-3) -> float:
    """Max relative deviation of the Kalman-Bucy ensemble variance from the Riccati ODE for t >= 1."""
    a, q, r, c0 = -1.0, 0.5, 0.1, 2.0
    rng = np.random.default_rng(seed)
    obs = ObservationModel.linear([[1.0]], [[r]])
    x = np.sqrt(c0) * rng.standard_normal((m, 1))
    truth = np.zeros(1)
    var = [x.var()]
    for _ in range(n_steps):
        dy = obs.continuous_obs_increment(truth, dt, rng)
        x = x + a * x * dt + np.sqrt(q * dt) * rng.standard_normal(x.shape) + kbf_innovation(x, obs, dy, dt)
        truth = truth + a * truth * dt + np.sqrt(q * dt) * rng.standard_normal(1)
        var.append(x.var())
    t = np.arange(n_steps + 1) * dt
    exact = solve_ivp(
        lambda _, c: 2 * a * c + q - c * c / r, (0.0, t[-1]), [c0], t_eval=t, rtol=1e-10, atol=1e-12
    ).y[0]
    after = t >= 1.0
    return float(np.max(np.abs(np.array(var)[after] - exact[after]) / exact[after]))


def gradient_check_error(n_points: int = 100, seed: int = 11) -> float:
    """Largest analytic-vs-difference gap over drift, controlled drift and cost Jacobians."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    lorenz = lorenz63_model(rho=5000.0)
    pend = pendulum_model()
    for model, scale in ((lorenz, 10.0), (pend, 3.0)):
        for _ in range(n_points):
            x = scale * rng.standard_normal(model.d_x)
            if model is lorenz:
                x[0] = np.sign(x[0]) * max(abs(x[0]), 1e-3)
            u = rng.standard_normal(model.d_u)
            pairs = [
                (model.drift_jacobian(x), numeric_jacobian(model.drift, x)),
                (
                    model.controlled_drift_jacobian(x, u),
                    numeric_jacobian(lambda z: model.controlled_drift(z, u), x),
                ),
            ]
            grad = model.cost_gradient(x)
            num = numeric_jacobian(lambda z: np.atleast_1d(model.running_cost(z)), x)[0]
            pairs.append((grad, num))
            for exact, approx in pairs:
                worst = max(worst, float(np.max(np.abs(exact - approx) / np.maximum(1.0, np.abs(exact)))))
    return worst


def sinkhorn_invariant_errors(n_ensembles: int = 50, seed: int = 5):
    """Worst row/column-sum and symmetry defects of the coupling over random ensembles."""
    rng = np.random.default_rng(seed)
    sums = sym = 0.0
    for _ in range(n_ensembles):
        m = int(rng.integers(2, 60))
        d = int(rng.integers(1, 4))
        X = rng.standard_normal((m, d)) * rng.uniform(0.2, 3.0)
        A = rng.standard_normal((d, d))
        sigma = A @ A.T + 0.5 * np.eye(d)
        mu = sinkhorn_coupling(X, sigma, rng.uniform(0.05, 2.0)).mu
        sums = max(sums, np.abs(mu.sum(axis=0)).max(), np.abs(mu.sum(axis=1)).max())
        sym = max(sym, np.abs(mu - mu.T).max())
    return float(sums), float(sym)


def _timed(name: str, fn: Callable[[], "tuple[float, float, str]"]) -> OracleResult:
    start = time.perf_counter()
    error, tol, detail = fn()
    return OracleResult(name, bool(error <= tol), error, tol, time.perf_counter() - start, detail)


def _score_check(d: int):
    def run():
        return gaussian_score_error(d, SCORE_SCALES[d]), 0.15, f"(d={d}, M=5000)"

    return run


def _kalman_check():
    dm, dv = kalman_update_errors()
    return max(dm, dv), 3.0, f"(mean {dm:.2f} SE, variance {dv:.2f} SE)"


def _sinkhorn_check():
    sums, sym = sinkhorn_invariant_errors()
    # Report on the symmetry scale: sums are held to 1e-8 and symmetry to 1e-10.
    return max(sums / 1e-8, sym / 1e-10), 1.0, f"(sums {sums:.1e}, symmetry {sym:.1e})"


ORACLES = [
    ("gaussian score d=1", _score_check(1)),
    ("gaussian score d=2", _score_check(2)),
    ("gaussian score d=3", _score_check(3)),
    ("kalman discrete update", _kalman_check),
    ("kalman-bucy riccati tracking", lambda: (riccati_tracking_error(), 0.05, "")),
    ("jacobian and gradient checks", lambda: (gradient_check_error(), 1e-5, "")),
    ("sinkhorn invariants", _sinkhorn_check),
]


def run_selftest(echo: Callable[[str], None] = print) -> List[OracleResult]:
    results = []
    for name, fn in ORACLES:
        result = _timed(name, fn)
        echo(result.line())
        results.append(result)
    return results
