import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stmd import data


@pytest.mark.parametrize("spec", [
    data.gaussian(2.0, 2),
    data.gaussian(1.0, 1),
    data.ring_gmm(8, 2.0, 0.2),
    data.gmm([[0.0, 1.0], [3.0, -1.0]], [0.5, 0.2], [0.4, 0.6]),
    data.two_moons(0.1),
    data.checkerboard(),
])
def test_second_moment_matches_monte_carlo(spec, rng):
    x = spec.sample(rng, 400_000)
    sq = np.sum(x * x, axis=1)
    assert abs(sq.mean() - data.second_moment(spec)) < 4 * sq.std() / np.sqrt(sq.size)


def test_ring_geometry():
    spec = data.ring_gmm(8, 2.0, 0.2)
    np.testing.assert_allclose(np.linalg.norm(spec.means, axis=1), 2.0)
    assert spec.weights.sum() == pytest.approx(1.0)


def test_invalid_specs():
    with pytest.raises(data.DatasetError):
        data.DatasetSpec("spiral")
    with pytest.raises(data.DatasetError):
        data.gmm([[0.0], [1.0]], [1.0, 1.0], [0.5, 0.6])
    with pytest.raises(data.DatasetError):
        data.gaussian(-1.0)
    with pytest.raises(data.DatasetError):
        data.DatasetSpec("checkerboard", dim=3)
    with pytest.raises(data.DatasetError):
        data.from_csv("/nonexistent/points.csv")


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_csv_round_trip_is_bit_exact(tmp_path_factory, pts):
    path = tmp_path_factory.mktemp("csv") / "pts.csv"
    data.write_points_csv(path, pts)
    back = data.read_points_csv(path)
    assert back.tobytes() == pts.tobytes()


def test_csv_header_and_ingest(tmp_path, rng):
    pts = rng.standard_normal((5, 3))
    path = tmp_path / "p.csv"
    data.write_points_csv(path, pts)
    assert path.read_text().splitlines()[0] == "x0,x1,x2"
    spec = data.from_csv(path)
    assert spec.dim == 3
    assert data.second_moment(spec) == pytest.approx(np.mean(np.sum(pts ** 2, axis=1)))


def test_csv_rejects_garbage(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(data.DatasetError):
        data.read_points_csv(path)
    path.write_text("x0,x1\n1,zz\n")
    with pytest.raises(data.DatasetError):
        data.read_points_csv(path)


def test_conditional_grid_is_normalized_and_bimodal():
    spec = data.ring_gmm(8, 2.0, 0.2)
    grid = np.linspace(-4, 4, 4001)
    dens = data.gmm_conditional_grid(spec, 0, 0.0, grid)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-12)
    # symmetric about 0 with mass near +-2
    np.testing.assert_allclose(dens, dens[::-1], atol=1e-12)
    assert dens[np.argmin(abs(grid - 2.0))] > 100 * dens[np.argmin(abs(grid))]


def test_grid_sampler_moments(rng):
    grid = np.linspace(-8, 8, 8001)
    dens = np.exp(-0.5 * (grid - 1.0) ** 2 / 0.25)
    x = data.sample_from_grid(grid, dens / np.trapezoid(dens, grid), 200_000, rng)
    assert abs(x.mean() - 1.0) < 4 * 0.5 / np.sqrt(x.size)
    assert x.std() == pytest.approx(0.5, rel=0.01)
