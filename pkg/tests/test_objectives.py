import numpy as np
import pytest

from stmd import network
from stmd.objectives import (RsSamplerCfg, adaptive_weight, dcmf_target_and_residual,
                             interpolate, mf_target_and_residual, raw_loss_grad, sample_rs,
                             weighted_loss)


def test_rs_ordering_and_equal_fraction(rng):
    r, s = sample_rs(rng, RsSamplerCfg(), 100_000)
    assert np.all((0 < r) & (r <= s) & (s < 1))
    frac = np.mean(r == s)
    assert abs(frac - 0.25) < 4 * np.sqrt(0.25 * 0.75 / r.size)


def test_rs_config_validation():
    with pytest.raises(ValueError):
        RsSamplerCfg(p_equal=1.5)
    with pytest.raises(ValueError):
        RsSamplerCfg(sigma=0.0)


def test_adaptive_weight():
    assert adaptive_weight(0.99, 0.01, 1.0) == pytest.approx(1.0)
    assert adaptive_weight(3.0, 1.0, 0.5) == pytest.approx(0.5)
    assert adaptive_weight(5.0, 0.01, 0.0) == 1.0
    with pytest.raises(ValueError):
        adaptive_weight(1.0, 0.0)


def test_interpolate_endpoints(rng):
    z0, z1 = rng.standard_normal((2, 3, 2))
    np.testing.assert_array_equal(interpolate(z0, z1, np.zeros(3)), z0)
    np.testing.assert_array_equal(interpolate(z0, z1, np.ones(3)), z1)


def test_flow_matching_limit_when_r_equals_s(rng):
    # with r = s the target collapses to the conditional velocity z1 - z0
    net = network.init_net(0, network.make_widths(2, (16,), 4), 4)
    z0, z1 = rng.standard_normal((2, 6, 2))
    s = rng.uniform(size=6)
    z_s = interpolate(z0, z1, s)
    delta, _ = mf_target_and_residual(net, z_s, s, s, z0, z1)
    np.testing.assert_allclose(delta, network.forward(net, z_s, s, s, None, 0.0) - (z1 - z0),
                               atol=1e-14)


def test_conditional_variant_feeds_condition(rng):
    net = network.init_net(0, network.make_widths(2, (16,), 4), 4)
    z0, z1, xt = rng.standard_normal((3, 6, 2))
    r, s = np.full(6, 0.2), np.full(6, 0.7)
    z_s = interpolate(z0, z1, s)
    a, _ = dcmf_target_and_residual(net, z_s, r, s, xt, np.full(6, 0.5), z0, z1)
    b, _ = dcmf_target_and_residual(net, z_s, r, s, xt * 0, np.full(6, 0.5), z0, z1)
    assert not np.allclose(a, b)


def test_weighted_loss_value_and_stop_gradient(rng):
    delta = rng.standard_normal((8, 2))
    info, upstream = weighted_loss(delta, c=0.5, p=1.0)
    dsq = np.sum(delta ** 2, axis=1)
    w = 1.0 / (dsq.mean() + 0.5)
    assert info.raw_loss == pytest.approx(dsq.mean())
    assert info.weighted_loss == pytest.approx(w * dsq.mean())
    # weight is a constant: d/d delta of w * mean ||delta||^2
    np.testing.assert_allclose(upstream, w * 2 * delta / 8)


def test_per_sample_weighting(rng):
    delta = rng.standard_normal((8, 2))
    info, upstream = weighted_loss(delta, c=0.5, p=1.0, per_sample=True)
    dsq = np.sum(delta ** 2, axis=1)
    w = 1.0 / (dsq + 0.5)
    assert info.weighted_loss == pytest.approx(np.mean(w * dsq))
    np.testing.assert_allclose(upstream, w[:, None] * 2 * delta / 8)


def test_loss_gradient_treats_target_as_constant(rng):
    net = network.init_net(1, network.make_widths(1, (8, 8), 4), 4)
    z0, z1 = rng.standard_normal((2, 5, 1))
    r, s = np.full(5, 0.1), np.full(5, 0.6)
    z_s = interpolate(z0, z1, s)
    delta, target, cache = mf_target_and_residual(net, z_s, r, s, z0, z1, return_cache=True)
    grad = raw_loss_grad(net, delta, cache)
    h = 1e-6
    direction = rng.standard_normal(net.params.shape)

    def loss(params):
        out = network.forward(net.copy(params), z_s, r, s, None, 0.0)
        return np.mean(np.sum((out - target) ** 2, axis=1))

    fd = (loss(net.params + h * direction) - loss(net.params - h * direction)) / (2 * h)
    assert grad @ direction == pytest.approx(fd, rel=1e-6)
