import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from twinctl.ensemble import Ensemble, empirical_cross_cov, empirical_mean, inflated_state_cov

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_mean_single_element():
    np.testing.assert_array_equal(empirical_mean([[1.0, 2.0, 3.0]]), [1.0, 2.0, 3.0])


@pytest.mark.parametrize("a", [0.0, 1.5, -7.25, 1e6])
def test_mean_symmetric_pair(a):
    np.testing.assert_array_equal(empirical_mean([[a], [-a]]), [0.0])


def test_mean_direct_sum():
    np.testing.assert_allclose(empirical_mean([[1, 0], [3, 2], [5, 4]]), [3.0, 2.0])


def test_mean_empty_raises():
    with pytest.raises(ValueError):
        empirical_mean(np.zeros((0, 3)))


def test_cross_cov_uses_one_over_m():
    np.testing.assert_allclose(empirical_cross_cov([[-1.0], [1.0]], [[-1.0], [1.0]]), [[1.0]])


def test_cross_cov_constant_ys_is_zero(rng):
    xs = rng.standard_normal((7, 3))
    ys = np.tile([2.0, -1.0], (7, 1))
    np.testing.assert_array_equal(empirical_cross_cov(xs, ys), np.zeros((3, 2)))


def test_cross_cov_single_particle():
    np.testing.assert_array_equal(empirical_cross_cov([[1.0, 2.0]], [[3.0]]), np.zeros((2, 1)))


def test_cross_cov_length_mismatch():
    with pytest.raises(ValueError):
        empirical_cross_cov(np.zeros((3, 2)), np.zeros((4, 2)))


def test_inflated_cov_examples():
    np.testing.assert_allclose(inflated_state_cov([[0.0], [0.0]], 0.2), [[0.2]])
    np.testing.assert_allclose(inflated_state_cov([[-1.0], [1.0]], 0.5), [[1.5]])


def test_inflated_cov_zero_is_plain(rng):
    xs = rng.standard_normal((10, 3))
    np.testing.assert_array_equal(inflated_state_cov(xs, 0.0), empirical_cross_cov(xs, xs))


def test_inflated_cov_negative_rejected():
    with pytest.raises(ValueError):
        inflated_state_cov([[0.0]], -1.0)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (6, 3), elements=finite),
    arrays(np.float64, (6, 3), elements=finite),
    st.floats(-10, 10),
)
def test_mean_is_linear(x, y, a):
    np.testing.assert_allclose(
        empirical_mean(a * x + y), a * empirical_mean(x) + empirical_mean(y), atol=1e-8
    )


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 3), elements=finite), st.floats(1e-3, 10))
def test_covariance_psd_and_inflation_floor(x, sigma):
    cov = empirical_cross_cov(x, x)
    np.testing.assert_allclose(cov, cov.T)
    scale = max(1.0, np.abs(cov).max())
    assert np.linalg.eigvalsh(cov).min() >= -1e-12 * scale
    infl = inflated_state_cov(x, sigma)
    assert np.linalg.eigvalsh(infl).min() >= sigma - 1e-10 * scale


def test_linear_map_consistency(rng):
    xs = rng.standard_normal((20, 3))
    H = rng.standard_normal((2, 3))
    np.testing.assert_allclose(
        empirical_cross_cov(xs, xs @ H.T), empirical_cross_cov(xs, xs) @ H.T, atol=1e-14
    )


def test_ensemble_shape_checks():
    with pytest.raises(ValueError):
        Ensemble(np.zeros((3, 2)), np.zeros((2, 2)))
    ens = Ensemble(np.zeros((3, 2)), np.zeros((3, 2)))
    assert ens.size == 3 and ens.dim == 2
