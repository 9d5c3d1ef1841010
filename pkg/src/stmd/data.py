"""Synthetic datasets with known structure, plus CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


KINDS = ("gaussian", "gmm", "two_moons", "checkerboard", "csv")


class DatasetError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: str
    dim: int = 2
    sigma0: float = 1.0
    means: np.ndarray | None = None
    stds: np.ndarray | None = None
    weights: np.ndarray | None = None
    noise: float = 0.05
    path: str | None = None
    _points: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "gaussian":
            if self.sigma0 <= 0:
                raise DatasetError("gaussian sigma0 must be positive")
        elif self.kind == "gmm":
            self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
            k, self.dim = self.means.shape
            self.stds = np.broadcast_to(np.asarray(self.stds, dtype=np.float64), (k,)).copy()
            if self.weights is None:
                self.weights = np.full(k, 1.0 / k)
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (k,) or np.any(self.weights < 0):
                raise DatasetError("gmm weights must be nonnegative, one per component")
            if abs(self.weights.sum() - 1.0) > 1e-12:
                raise DatasetError(f"gmm weights sum to {self.weights.sum()}, not 1")
            if np.any(self.stds < 0):
                raise DatasetError("gmm stds must be nonnegative")
        elif self.kind in ("two_moons", "checkerboard"):
            if self.dim != 2:
                raise DatasetError(f"{self.kind} is two-dimensional")
        elif self.kind == "csv":
            if not self.path:
                raise DatasetError("csv dataset needs a path")
            self._points = read_points_csv(self.path)
            self.dim = self._points.shape[1]
        if self.dim < 1:
            raise DatasetError("dim must be positive")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "gaussian":
            out["sigma0"] = self.sigma0
        elif self.kind == "gmm":
            out.update(means=self.means.tolist(), stds=self.stds.tolist(),
                       weights=self.weights.tolist())
        elif self.kind == "two_moons":
            out["noise"] = self.noise
        elif self.kind == "csv":
            out["path"] = str(self.path)
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return sample_dataset(self, n, rng)

    @property
    def is_gmm_like(self) -> bool:
        return self.kind in ("gaussian", "gmm")

    def mixture(self):
        """``(means, stds, weights)``; a Gaussian is a one-component mixture."""
        if self.kind == "gaussian":
            return np.zeros((1, self.dim)), np.array([self.sigma0]), np.array([1.0])
        if self.kind == "gmm":
            return self.means, self.stds, self.weights
        raise DatasetError(f"{self.kind} has no mixture representation")


def gaussian(sigma0: float = 1.0, dim: int = 2) -> DatasetSpec:
    return DatasetSpec("gaussian", dim=dim, sigma0=sigma0)


def gmm(means, stds, weights=None) -> DatasetSpec:
    return DatasetSpec("gmm", means=means, stds=stds, weights=weights)


def ring_gmm(n_components: int = 8, radius: float = 2.0, std: float = 0.2) -> DatasetSpec:
    ang = 2.0 * np.pi * np.arange(n_components) / n_components
    means = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return gmm(means, np.full(n_components, std))


def two_moons(noise: float = 0.05) -> DatasetSpec:
    return DatasetSpec("two_moons", dim=2, noise=noise)


def checkerboard() -> DatasetSpec:
    return DatasetSpec("checkerboard", dim=2)


def from_csv(path) -> DatasetSpec:
    return DatasetSpec("csv", path=str(path))


def sample_dataset(spec: DatasetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise DatasetError(f"need n >= 1, got {n}")
    if spec.kind == "gaussian":
        return spec.sigma0 * rng.standard_normal((n, spec.dim))
    if spec.kind == "gmm":
        k = rng.choice(len(spec.weights), size=n, p=spec.weights)
        return spec.means[k] + spec.stds[k, None] * rng.standard_normal((n, spec.dim))
    if spec.kind == "two_moons":
        upper = rng.uniform(size=n) < 0.5
        theta = rng.uniform(0.0, np.pi, size=n)
        x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
        y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
        return np.stack([x, y], axis=1) + spec.noise * rng.standard_normal((n, 2))
    if spec.kind == "checkerboard":
        # 4x4 board on [-2, 2]^2, cells with (i + j) even
        col = rng.integers(0, 4, size=n)
        row = 2 * rng.integers(0, 2, size=n) + (col % 2)
        u = rng.uniform(size=(n, 2))
        return np.stack([col + u[:, 0], row + u[:, 1]], axis=1) - 2.0
    idx = rng.integers(0, spec._points.shape[0], size=n)
    return spec._points[idx]


def second_moment(spec: DatasetSpec) -> float:
    """``E||x0||^2`` in closed form (empirical for CSV data)."""
    if spec.kind == "gaussian":
        return spec.dim * spec.sigma0 ** 2
    if spec.kind == "gmm":
        w, mu, sd = spec.weights, spec.means, spec.stds
        return float(np.sum(w * (np.sum(mu * mu, axis=1) + spec.dim * sd * sd)))
    if spec.kind == "two_moons":
        # upper arc has unit norm; lower arc gives 2.25 - 2 cos - sin, E sin = 2/pi
        return 0.5 * (1.0 + 2.25 - 2.0 / np.pi) + 2 * spec.noise ** 2
    if spec.kind == "checkerboard":
        # each coordinate is marginally uniform on [-2, 2]
        return 2 * 4.0 / 3.0
    return float(np.mean(np.sum(spec._points ** 2, axis=1)))


def gmm_conditional_grid(spec: DatasetSpec, observed_coord: int, value: float, grid):
    """Density of the free coordinate of a 2D GMM given the other coordinate.

    Components are isotropic, so within a component the coordinates are
    independent; the conditional is a reweighted 1D mixture. Returns the
    density on ``grid`` normalized to unit trapezoid integral.
    """
    means, stds, weights = spec.mixture()
    if means.shape[1] != 2:
        raise DatasetError("gmm_conditional_grid needs 2D data")
    if observed_coord not in (0, 1):
        raise DatasetError("observed_coord must be 0 or 1")
    free = 1 - observed_coord
    grid = np.asarray(grid, dtype=np.float64)
    logw = (np.log(weights) - 0.5 * ((value - means[:, observed_coord]) / stds) ** 2
            - np.log(stds))
    if not np.isfinite(logw).any():
        raise DatasetError("conditional weights underflow")
    logw -= logw.max()
    w = np.exp(logw)
    if w.sum() < 1e-300:
        raise DatasetError("conditional weights underflow")
    w /= w.sum()
    z = (grid[:, None] - means[None, :, free]) / stds[None, :]
    dens = (w[None, :] * np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * stds[None, :])).sum(axis=1)
    total = np.trapezoid(dens, grid)
    if not total > 0:
        raise DatasetError(f"conditional density underflows on the grid at value {value}")
    return dens / total


def sample_from_grid(grid, density, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling of a piecewise-linear density on a grid."""
    grid = np.asarray(grid, dtype=np.float64)
    cell = 0.5 * (density[1:] + density[:-1]) * np.diff(grid)
    cdf = np.concatenate([[0.0], np.cumsum(cell)])
    cdf /= cdf[-1]
    return np.interp(rng.uniform(size=n), cdf, grid)


def write_points_csv(path, points) -> None:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(points.shape[1])])
        for row in points:
            w.writerow([format(v, ".17g") for v in row])


def read_points_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if not rows or not all(h.strip().startswith("x") for h in rows[0]):
        raise DatasetError(f"{path}: expected header row x0,x1,...")
    try:
        pts = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"{path}: malformed number ({exc})") from exc
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] != len(rows[0]):
        raise DatasetError(f"{path}: no points or ragged rows")
    return pts
