import numpy as np
import pytest

from twinctl.observation import ObservationModel, sqrtm_psd

X0 = np.array([7.8590, 7.1136, 27.2293])


class ZeroRng:
    def standard_normal(self, size):
        return np.zeros(size)


class FixedRng:
    def __init__(self, xi):
        self.xi = np.asarray(xi, dtype=float)

    def standard_normal(self, size):
        return self.xi.copy()


def lorenz_obs(noise=0.01):
    return ObservationModel.linear(np.eye(3)[:2], noise * np.eye(2))


def test_continuous_increment_zero_noise_draw():
    dy = lorenz_obs().continuous_obs_increment(X0, 0.001, ZeroRng())
    np.testing.assert_allclose(dy, [0.0078590, 0.0071136], rtol=0, atol=1e-15)


def test_continuous_increment_small_noise_limit(rng):
    obs = lorenz_obs(noise=1e-20)
    dy = obs.continuous_obs_increment(X0, 0.01, rng)
    np.testing.assert_allclose(dy, X0[:2] * 0.01, atol=1e-11)


def test_discrete_zero_draw_and_additive_structure(rng):
    obs = ObservationModel.linear(np.eye(3), np.eye(3), interval=0.1)
    np.testing.assert_array_equal(obs.discrete_obs(X0, ZeroRng()), X0)
    xi = rng.standard_normal(3)
    np.testing.assert_allclose(obs.discrete_obs(X0, FixedRng(xi)), X0 + xi)


def test_discrete_obs_in_continuous_mode_raises():
    with pytest.raises(RuntimeError):
        lorenz_obs().discrete_obs(X0, np.random.default_rng(0))


R_FULL = np.array([[0.01, 0.003], [0.003, 0.02]])


def test_continuous_noise_covariance_monte_carlo():
    obs = ObservationModel.linear(np.eye(3)[:2], R_FULL)
    rng = np.random.default_rng(1)
    dt = 0.001
    draws = np.array([obs.continuous_obs_increment(X0, dt, rng) for _ in range(100_000)])
    scaled = (draws - X0[:2] * dt) / np.sqrt(dt)
    cov = np.cov(scaled.T, bias=True)
    np.testing.assert_allclose(cov, R_FULL, rtol=0.05)


def test_discrete_noise_covariance_monte_carlo():
    obs = ObservationModel.linear(np.eye(3)[:2], R_FULL, interval=0.05)
    rng = np.random.default_rng(2)
    draws = np.array([obs.discrete_obs(X0, rng) for _ in range(100_000)])
    cov = np.cov((draws - X0[:2]).T, bias=True)
    np.testing.assert_allclose(cov, R_FULL, rtol=0.05)


def test_fixed_seed_reproducible():
    obs = lorenz_obs()
    a = [obs.continuous_obs_increment(X0, 0.001, r) for r in [np.random.default_rng(3)] * 5]
    b = [obs.continuous_obs_increment(X0, 0.001, r) for r in [np.random.default_rng(3)] * 5]
    np.testing.assert_array_equal(a, b)


def test_sqrtm_is_symmetric_root(rng):
    A = rng.standard_normal((3, 3))
    A = A @ A.T
    S = sqrtm_psd(A)
    np.testing.assert_allclose(S, S.T)
    np.testing.assert_allclose(S @ S, A, atol=1e-12)
    np.testing.assert_allclose(sqrtm_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_invalid_noise_rejected():
    with pytest.raises(ValueError):
        ObservationModel.linear(np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ObservationModel.linear(np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_linear_forward_map(rng):
    H = rng.standard_normal((2, 3))
    obs = ObservationModel.linear(H, np.eye(2))
    xs = rng.standard_normal((5, 3))
    np.testing.assert_allclose(obs.h(xs), xs @ H.T)
