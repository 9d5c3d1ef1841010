import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from stmd import analytic
from stmd.schedule import alpha_sigma

# mpmath: z exp(-int_r^s k) with k the velocity gain of N(0, 4) -> N(0, 1), 30 digits
FROZEN_U = {(0.25, 0.75, 1.3): -1.7863424398922617633, (0.0, 1.0, 1.0): -1.0}


def test_velocity_hand_value():
    # D(0.5) = 0.25*4 + 0.25 = 1.25, gain = (0.5 - 0.5*4)/1.25 = -1.2
    v = analytic.gauss_velocity(2.0, np.array([0.5]), np.array([[1.0]]))
    assert v[0, 0] == pytest.approx(-1.2, rel=1e-15)


@pytest.mark.parametrize("key", sorted(FROZEN_U))
def test_mean_flow_frozen(key):
    r, s, z = key
    u = analytic.gauss_meanflow_u(2.0, np.array([r]), np.array([s]), np.array([[z]]))
    assert u[0, 0] == pytest.approx(FROZEN_U[key], rel=1e-13)


def test_mean_flow_matches_ode_integration(rng):
    z = rng.standard_normal((4, 2))
    r, s = 0.1, 0.9
    sol = solve_ivp(lambda tau, y: analytic.gauss_velocity(1.5, np.full(4, tau), y.reshape(4, 2)).ravel(),
                    (s, r), z.ravel(), rtol=1e-12, atol=1e-12, method="DOP853")
    u_ref = (z - sol.y[:, -1].reshape(4, 2)) / (s - r)
    u = analytic.gauss_meanflow_u(1.5, np.full(4, r), np.full(4, s), z)
    np.testing.assert_allclose(u, u_ref, rtol=1e-9)


def test_mean_flow_r_equals_s_is_velocity(rng):
    z = rng.standard_normal((3, 2))
    s = np.array([0.2, 0.5, 0.8])
    np.testing.assert_allclose(analytic.gauss_meanflow_u(2.0, s, s, z),
                               analytic.gauss_velocity(2.0, s, z), rtol=1e-12)


def test_mean_flow_jvp_against_finite_differences(rng):
    z, dz = rng.standard_normal((2, 5, 2))
    r, s = np.full(5, 0.3), np.full(5, 0.6)
    dr, ds = rng.standard_normal((2, 5))
    model = analytic.GaussianMeanFlow(2.0)
    _, du = model.jvp(z, r, s, None, None, dz, dr, ds)
    h = 1e-5
    fd = (model(z + h * dz, r + h * dr, s + h * ds) - model(z - h * dz, r - h * dr, s - h * ds)) / (2 * h)
    np.testing.assert_allclose(du, fd, rtol=1e-7, atol=1e-9)


def test_mean_flow_identity_holds_exactly(rng):
    # u = v - (s - r) du/ds along the flow, so the r = 0 residual vanishes
    model = analytic.GaussianMeanFlow(2.0)
    z = rng.standard_normal((6, 2))
    s = rng.uniform(0.05, 1.0, 6)
    v = analytic.gauss_velocity(2.0, s, z)
    u, du = model.jvp(z, np.zeros(6), s, None, None, v, 0.0, 1.0)
    np.testing.assert_allclose(u, v - s[:, None] * du, atol=1e-12)


def test_gmm_posterior_against_quadrature(sched):
    means = np.array([[-1.0], [2.0]])
    stds = np.array([0.5, 0.3])
    weights = np.array([0.3, 0.7])
    t, xt = 0.4, 0.8
    a, s = alpha_sigma(sched, t)

    def joint(x0):
        prior = sum(w * np.exp(-0.5 * ((x0 - m[0]) / sd) ** 2) / sd for m, sd, w in zip(means, stds, weights))
        return prior * np.exp(-0.5 * ((xt - a * x0) / s) ** 2)

    z = quad(joint, -10, 10, limit=200)[0]
    mean_ref = quad(lambda x: x * joint(x), -10, 10, limit=200)[0] / z
    var_ref = quad(lambda x: x * x * joint(x), -10, 10, limit=200)[0] / z - mean_ref ** 2
    pm, pv, logw = analytic.gmm_posterior(means, stds, weights, sched, np.array([[xt]]), np.array([t]))
    w = np.exp(logw[0])
    mean = w @ pm[0, :, 0]
    var = w @ (pv[0] + pm[0, :, 0] ** 2) - mean ** 2
    assert mean == pytest.approx(mean_ref, rel=1e-8)
    assert var == pytest.approx(var_ref, rel=1e-7)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)


def test_single_component_mixture_velocity(sched, rng):
    model = analytic.GaussianPosteriorMeanFlow(1.0, sched)
    xt = rng.standard_normal((4, 2))
    t = np.full(4, 0.5)
    z = rng.standard_normal((4, 2))
    s = np.full(4, 0.4)
    post = analytic.gmm_posterior(np.zeros((1, 2)), np.array([1.0]), np.array([1.0]), sched, xt, t)
    np.testing.assert_allclose(analytic.mixture_velocity(*post, s, z), model.velocity(s, z, xt, t),
                               rtol=1e-12)


def test_optimal_epsilon_is_posterior_residual(sched, rng):
    model = analytic.GaussianEpsilon(2.0, sched)
    xt = rng.standard_normal((3, 2))
    t = np.full(3, 0.6)
    a, s = alpha_sigma(sched, t)
    # E[x0|x_t] = a v x_t / (a^2 v + s^2) with v = 4
    post_mean = (a * 4.0 / (a * a * 4.0 + s * s))[:, None] * xt
    np.testing.assert_allclose(model(xt, 0.0, 0.0, None, t), (xt - a[:, None] * post_mean) / s[:, None],
                               rtol=1e-12)
