import itertools

import numpy as np
import pytest

from stmd import analytic, network
from stmd.evaluation import w2_gaussian_fit
from stmd.sample import (CountingModel, LinearObservation, SamplerError, SamplerSpec,
                         ddpm_sample, fm_euler_sample, meanflow_sample, sample_objective,
                         stmd_inpaint, stmd_sample)
from stmd.schedule import alpha_sigma

SIGMA0 = 2.0
TARGET_COV = SIGMA0 ** 2 * np.eye(2)


def _fit(x):
    return w2_gaussian_fit(x, np.zeros(2), TARGET_COV).value


@pytest.fixture
def posterior_model(sched):
    return analytic.GaussianPosteriorMeanFlow(SIGMA0, sched)


@pytest.mark.parametrize("n_inf, n_mf", [(1, 1), (1, 3), (4, 2), (3, 5)])
def test_stmd_nfe_is_exact(sched, posterior_model, n_inf, n_mf):
    model = CountingModel(posterior_model)
    stmd_sample(model, sched, SamplerSpec(n_inf, n_mf), 16, 2)
    assert model.calls == n_inf * n_mf == SamplerSpec(n_inf, n_mf).nfe


@pytest.mark.parametrize("n_inf, n_mf", [(1, 1), (4, 2)])
def test_stmd_analytic_model_hits_target(sched, posterior_model, n_inf, n_mf):
    x = stmd_sample(posterior_model, sched, SamplerSpec(n_inf, n_mf, seed=3), 2048, 2)
    assert _fit(x) < 0.05


def test_stmd_is_seeded(sched, posterior_model):
    a = stmd_sample(posterior_model, sched, SamplerSpec(4, 2, seed=9), 64, 2)
    b = stmd_sample(posterior_model, sched, SamplerSpec(4, 2, seed=9), 64, 2)
    c = stmd_sample(posterior_model, sched, SamplerSpec(4, 2, seed=10), 64, 2)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_stmd_path_is_marginal_preserving(sched, posterior_model):
    n, n_inf = 200_000, 4
    _, path = stmd_sample(posterior_model, sched, SamplerSpec(n_inf, 1, seed=1), n, 2,
                          return_path=True)
    assert [t for t, _ in path] == [1.0, 0.75, 0.5, 0.25, 0.0]
    for t, x in path:
        a, s = alpha_sigma(sched, t)
        var = a * a * SIGMA0 ** 2 + s * s
        assert np.all(abs(x.mean(axis=0)) < 3 * np.sqrt(var / n) + 1e-12)
        assert np.all(abs(x.var(axis=0) - var) < 3 * var * np.sqrt(2.0 / n))


def test_spec_validation():
    with pytest.raises(SamplerError):
        SamplerSpec(0, 1)
    with pytest.raises(SamplerError):
        SamplerSpec(1, 0)


def test_observation_pseudo_inverse(rng):
    mask = rng.standard_normal((2, 4))
    obs = LinearObservation(mask, rng.standard_normal(2))
    np.testing.assert_allclose(mask @ obs.pinv @ obs.y, obs.y, atol=1e-10)
    with pytest.raises(SamplerError):
        LinearObservation(np.array([[1.0, 0.0], [2.0, 0.0]]), np.zeros(2))


def test_identity_mask_returns_observation(sched, posterior_model):
    y = np.array([0.7, -1.1])
    x = stmd_inpaint(posterior_model, sched, SamplerSpec(4, 2), LinearObservation(np.eye(2), y), 10)
    np.testing.assert_allclose(x, np.tile(y, (10, 1)), atol=1e-12)


def test_coordinate_mask_holds_to_tolerance(sched, posterior_model):
    obs = LinearObservation(np.array([[1.0, 0.0]]), np.array([0.4]))
    x = stmd_inpaint(posterior_model, sched, SamplerSpec(5, 2, seed=2), obs, 500)
    assert np.abs(obs.residual(x)).max() <= 1e-8
    # independent coordinates: the free one is still N(0, sigma0^2)
    assert abs(x[:, 1].std() - SIGMA0) < 0.15


def test_ddpm_with_optimal_epsilon(sched):
    model = CountingModel(analytic.GaussianEpsilon(SIGMA0, sched))
    x = ddpm_sample(model, sched, 1000, 2048, 2, seed=0)
    assert model.calls == 1000
    assert _fit(x) < 0.05
    assert x.tobytes() == ddpm_sample(analytic.GaussianEpsilon(SIGMA0, sched), sched, 1000, 2048, 2, 0).tobytes()


def test_euler_flow_with_exact_velocity():
    model = CountingModel(analytic.GaussianVelocity(SIGMA0))
    x = fm_euler_sample(model, 500, 2048, 2, seed=0)
    assert model.calls == 500
    assert _fit(x) < 0.05


def test_euler_converges_to_exact_flow_map(rng):
    # Euler with many steps approaches the closed-form one-step map on the same noise
    z1 = np.random.default_rng(4).standard_normal((64, 2))
    exact = z1 - analytic.gauss_meanflow_u(SIGMA0, np.zeros(64), np.ones(64), z1)
    coarse = fm_euler_sample(analytic.GaussianVelocity(SIGMA0), 100, 64, 2, seed=4)
    fine = fm_euler_sample(analytic.GaussianVelocity(SIGMA0), 1000, 64, 2, seed=4)
    assert np.abs(fine - exact).max() < np.abs(coarse - exact).max() / 5


def test_meanflow_one_step_is_definition():
    model = analytic.GaussianMeanFlow(SIGMA0)
    x = meanflow_sample(model, 1, 2048, 2, seed=5)
    z1 = np.random.default_rng(5).standard_normal((2048, 2))
    np.testing.assert_array_equal(x, z1 - model(z1, np.zeros(2048), np.ones(2048)))
    assert _fit(x) < 0.05


@pytest.mark.parametrize("objective, n_inf, n_mf", list(itertools.product(
    ["stmd", "meanflow", "cfm", "ddpm"], [1, 2], [1, 3])))
def test_dispatch_nfe(sched, objective, n_inf, n_mf):
    net = network.init_net(0, network.make_widths(2, (8,), 4), 4)
    model = CountingModel(net)
    sample_objective(objective, model, sched, 8, 2, n_inf, n_mf)
    assert model.calls == n_inf * n_mf


def test_nan_parameters_raise(sched):
    net = network.init_net(0, network.make_widths(2, (8,), 4), 4)
    net.params[:] = np.nan
    with pytest.raises(FloatingPointError):
        stmd_sample(net, sched, SamplerSpec(2, 1), 4, 2)
