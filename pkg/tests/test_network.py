import numpy as np
import pytest

from stmd import network
from stmd.evaluation import jvp_fd_suite


@pytest.fixture
def small_net():
    return network.init_net(3, network.make_widths(2, (16, 16), 8), 8)


def test_widths_validation():
    with pytest.raises(network.NetworkConfigError):
        network.init_net(0, (10, 0, 2), 4)
    with pytest.raises(network.NetworkConfigError):
        # input width must be 2 d + 3 embed_dim
        network.init_net(0, (10, 8, 2), 8)
    with pytest.raises(network.NetworkConfigError):
        network.make_widths(2, (8,), 7)


def test_param_count(small_net):
    widths = small_net.widths
    expected = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    assert small_net.params.size == expected == network.n_params(widths)


def test_forward_shape_and_scalar_times(small_net, rng):
    z, x = rng.standard_normal((2, 5, 2))
    out = network.forward(small_net, z, 0.1, 0.4, x, 0.7)
    assert out.shape == (5, 2)
    batched = network.forward(small_net, z, np.full(5, 0.1), np.full(5, 0.4), x, np.full(5, 0.7))
    np.testing.assert_array_equal(out, batched)


def test_missing_condition_equals_zeros(small_net, rng):
    z = rng.standard_normal((4, 2))
    np.testing.assert_array_equal(network.forward(small_net, z, 0.0, 1.0, None, 0.0),
                                  network.forward(small_net, z, 0.0, 1.0, np.zeros((4, 2)), 0.0))


def test_init_is_seeded():
    w = network.make_widths(1, (8,), 4)
    a, b = network.init_net(5, w, 4), network.init_net(5, w, 4)
    np.testing.assert_array_equal(a.params, b.params)
    assert not np.array_equal(a.params, network.init_net(6, w, 4).params)


def test_zero_tangent_gives_zero_jvp(small_net, rng):
    z, x = rng.standard_normal((2, 3, 2))
    _, du = network.jvp(small_net, z, 0.2, 0.5, x, 0.9, np.zeros((3, 2)))
    assert np.all(du == 0.0)


def test_jvp_primal_matches_forward(small_net, rng):
    z, x, dz = rng.standard_normal((3, 3, 2))
    u, _ = network.jvp(small_net, z, 0.2, 0.5, x, 0.9, dz, 0.0, 1.0)
    np.testing.assert_array_equal(u, network.forward(small_net, z, 0.2, 0.5, x, 0.9))


def test_fd_suite_quick():
    report = jvp_fd_suite(net_count=5, seed=7)
    assert report["passed"], report


def test_copy_is_independent(small_net):
    other = small_net.copy()
    other.params[0] += 1.0
    assert other.params[0] != small_net.params[0]
