from dataclasses import replace

import numpy as np
import pytest

from twinctl.controller import (
    ConfigError,
    DigitalTwin,
    TwinConfig,
    TwinStepError,
    compute_control,
    costate_rhs,
    state_rhs,
    step,
)
from twinctl.ensemble import Ensemble
from twinctl.models import ControlledModel, lorenz63_model, pendulum_model
from twinctl.observation import ObservationModel
from twinctl.regression import PsiEstimator
from twinctl.transport import apply_coupling, sinkhorn_coupling


def lorenz_setup(m=6, seed=0):
    rng = np.random.default_rng(seed)
    model = lorenz63_model(rho=5000.0, diffusion=0.5 * np.eye(3))
    obs = ObservationModel.linear(np.eye(3)[:2], 0.01 * np.eye(2))
    X = np.array([7.8590, 7.1136, 27.2293]) + rng.standard_normal((m, 3))
    X[0, 0] = -0.5  # one particle in the penalised region
    P = rng.standard_normal((m, 3))
    cfg = TwinConfig(gamma=10.0, bandwidth=1.0, alpha=0.1, sigma_infl=0.2, u_max=100.0, m=m)
    return Ensemble(X, P, 0.0), model, obs, cfg, rng


def linear_model(a=-1.0):
    return ControlledModel(
        name="linear",
        d_x=1,
        d_u=1,
        drift=lambda x: a * np.asarray(x),
        drift_jacobian=lambda x: np.full(np.shape(x)[:-1] + (1, 1), a),
        control_matrix=lambda x: np.ones(np.shape(x)[:-1] + (1, 1)),
        controlled_drift_jacobian=lambda x, u: np.full(np.shape(x)[:-1] + (1, 1), a),
        running_cost=lambda x: 0.5 * np.sum(np.asarray(x) ** 2, axis=-1),
        cost_gradient=lambda x: np.asarray(x, dtype=float),
        diffusion=np.eye(1),
        params={"a": a},
    )


def test_step_matches_per_particle_formulas():
    ens, model, obs, cfg, rng = lorenz_setup()
    dy = np.array([0.0078, 0.0071])
    new, diag, coupling = step(ens, model, obs, cfg, data=dy)

    from twinctl.enkf import kbf_innovation

    u = compute_control(ens, model, cfg.u_max)
    ref = sinkhorn_coupling(ens.states, model.diffusion, cfg.alpha_value)
    score = apply_coupling(ref, ens.states)
    coupled = apply_coupling(ref, ens.costates)
    innov = kbf_innovation(ens.states, obs, dy, cfg.dt, cfg.sigma_infl)
    psi = PsiEstimator(ens.states, ens.costates, cfg.bandwidth)
    for i in range(ens.size):
        xd = state_rhs(i, ens, model, u, score[i], innov[i], cfg.dt)
        pd = costate_rhs(i, ens, model, u, xd, innov[i], coupled[i], psi, cfg.epsilon, cfg.gamma, cfg.dt)
        np.testing.assert_allclose(new.states[i], ens.states[i] + cfg.dt * xd, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(new.costates[i], ens.costates[i] + cfg.dt * pd, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(diag.control, u)
    assert new.time == pytest.approx(cfg.dt)


def test_step_does_not_modify_input_snapshot():
    ens, model, obs, cfg, _ = lorenz_setup()
    before = ens.copy()
    step(ens, model, obs, cfg, data=np.zeros(2))
    np.testing.assert_array_equal(ens.states, before.states)
    np.testing.assert_array_equal(ens.costates, before.costates)


def test_step_is_permutation_equivariant():
    ens, model, obs, cfg, rng = lorenz_setup(m=7)
    perm = rng.permutation(7)
    dy = np.array([0.01, -0.02])
    a, _, _ = step(ens, model, obs, cfg, data=dy)
    b, _, _ = step(Ensemble(ens.states[perm], ens.costates[perm]), model, obs, cfg, data=dy)
    np.testing.assert_allclose(b.states, a.states[perm], atol=1e-10)
    np.testing.assert_allclose(b.costates, a.costates[perm], atol=1e-7)


def test_step_is_deterministic():
    ens, model, obs, cfg, _ = lorenz_setup()
    a, _, _ = step(ens, model, obs, cfg, data=np.ones(2) * 0.01)
    b, _, _ = step(ens, model, obs, cfg, data=np.ones(2) * 0.01)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.costates, b.costates)


def test_control_is_clipped():
    model = lorenz63_model()
    ens = Ensemble(np.ones((3, 3)), np.full((3, 3), -1e4))
    u = compute_control(ens, model, u_max=50.0)
    assert np.all(np.abs(u) <= 50.0)
    assert np.max(np.abs(u)) == 50.0
    assert np.abs(compute_control(ens, model, None)).max() > 50.0


def test_control_is_negative_average_of_mapped_costates():
    model = pendulum_model()
    X = np.array([[0.0, 0.0], [np.pi, 1.0]])
    P = np.array([[0.0, 2.0], [0.0, 4.0]])
    # G(theta) = (0, cos theta)^T, so U = -((2)(1) + (4)(-1)) / 2 = 1.
    np.testing.assert_allclose(compute_control(Ensemble(X, P), model), [1.0])


def test_zero_cost_no_data_keeps_control_and_costates_zero():
    model = lorenz63_model(rho=0.0, diffusion=0.5 * np.eye(3))
    rng = np.random.default_rng(1)
    X = np.array([7.8590, 7.1136, 27.2293]) + np.sqrt(0.1) * rng.standard_normal((4, 3))
    twin = DigitalTwin(Ensemble(X, np.zeros((4, 3))), model, None,
                       TwinConfig(gamma=10.0, alpha=0.1, u_max=100.0, m=4))
    for _ in range(10_000):
        assert np.all(twin.control() == 0.0)
        twin.step(None)
        assert np.all(twin.ensemble.costates == 0.0)
    assert np.all(np.isfinite(twin.ensemble.states))


def test_scalar_linear_smoke():
    model = linear_model(-1.0)
    obs = ObservationModel.linear([[1.0]], [[0.01]])
    rng = np.random.default_rng(2)
    X = 1.0 + 0.3 * rng.standard_normal((20, 1))
    twin = DigitalTwin(Ensemble(X, np.zeros((20, 1))), model, obs,
                       TwinConfig(gamma=1.0, bandwidth=0.5, alpha=0.1, m=20))
    truth = np.array([1.0])
    for _ in range(2000):
        u = twin.control()
        twin.step(obs.continuous_obs_increment(truth, 1e-3, rng))
        truth = truth + 1e-3 * (-truth + u)
    assert np.all(np.isfinite(twin.ensemble.states))
    # Control pushes the state towards zero, so it opposes the costate sign.
    assert abs(truth[0]) < np.exp(-2.0) + 0.05
    assert abs(twin.ensemble.states.mean() - truth[0]) < 0.2


def test_discrete_observation_step_moves_towards_data():
    model = linear_model(0.0)
    # Pseudo-time Euler steps are stable while C / (R n_pseudo) stays below 2.
    obs = ObservationModel.linear([[1.0]], [[1.0]], interval=0.1)
    rng = np.random.default_rng(3)
    X = rng.standard_normal((30, 1))
    cfg = TwinConfig(gamma=1.0, bandwidth=0.5, alpha=0.5, m=30)
    ens = Ensemble(X, np.zeros((30, 1)))
    new, _, _ = step(ens, model, obs, cfg, data=np.array([2.0]))
    assert abs(new.states.mean() - 2.0) < abs(X.mean() - 2.0)
    assert new.states.std() < X.std()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_raises_with_step_index():
    model = linear_model()
    X = np.array([[0.0], [np.inf]])
    with pytest.raises(TwinStepError) as info:
        step(Ensemble(X, np.zeros((2, 1))), model, None, TwinConfig(gamma=1.0, m=2), step_index=17)
    assert info.value.step_index == 17


@pytest.mark.parametrize(
    "field_name,value",
    [("m", 0), ("gamma", 0.0), ("dt", -1.0), ("alpha", "auto"), ("sigma_infl", -0.1), ("u_max", -1.0)],
)
def test_config_validation_names_key(field_name, value):
    cfg = replace(TwinConfig(gamma=1.0), **{field_name: value})
    with pytest.raises(ConfigError) as info:
        cfg.validate()
    assert info.value.key == field_name
    assert str(info.value).startswith(field_name)


def test_alpha_may_follow_time_step():
    cfg = TwinConfig(gamma=1.0, alpha="dt", dt=0.01).validate()
    assert cfg.alpha_value == 0.01
    assert cfg.fd_value == 0.01
