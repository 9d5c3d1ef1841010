"""Few-step STMD sampling, projection inpainting, and baseline samplers.

A *model* is any callable ``model(z, r, s, x, t) -> (n, d) array``; trained
:class:`~stmd.network.MlpNet` instances and the analytic wrappers in
:mod:`stmd.analytic` both qualify. One call on a batch counts as one NFE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule, alpha_sigma, bridge_sample


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerSpec:
    n_inf: int = 4
    n_mf: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_inf < 1 or self.n_mf < 1:
            raise SamplerError(f"n_inf and n_mf must be >= 1, got {self.n_inf}, {self.n_mf}")

    @property
    def nfe(self) -> int:
        return self.n_inf * self.n_mf


class CountingModel:
    """Wraps a model and counts batched evaluations."""

    def __init__(self, model):
        self.model = model
        self.calls = 0

    def __call__(self, z, r, s, x, t):
        self.calls += 1
        return self.model(z, r, s, x, t)


class LinearObservation:
    """Noiseless linear measurement ``y = M x`` with cached pseudo-inverse."""

    def __init__(self, mask, y):
        M = np.atleast_2d(np.asarray(mask, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        gram = M @ M.T
        if np.linalg.matrix_rank(gram) < gram.shape[0] or np.linalg.cond(gram) > 1e12:
            raise SamplerError("M M^T is singular; mask rows must be linearly independent")
        self.M = M
        self.y = y
        self.pinv = M.T @ np.linalg.inv(gram)
        self._null = np.eye(M.shape[1]) - self.pinv @ M
        if y.shape[-1] != M.shape[0]:
            raise SamplerError(f"observation has {y.shape[-1]} entries, mask has {M.shape[0]} rows")

    def project(self, x0):
        """``M^+ y + (I - M^+ M) x0`` row-wise."""
        return self.y @ self.pinv.T + x0 @ self._null.T

    def residual(self, x0):
        return np.abs(x0 @ self.M.T - self.y).max(axis=-1)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")
    return arr


def _time_grid(n):
    # exact endpoints: t_k = (n - k) / n
    return [(n - k) / n for k in range(n + 1)]


def _mean_flow_solve(model, z, x_t, t, n_mf):
    """``z_{s - ds} = z_s - ds * u(z_s, s - ds, s, x_t, t)`` from s = 1 to 0."""
    n = z.shape[0]
    grid = _time_grid(n_mf)
    ts = np.full(n, t)
    for s_hi, s_lo in zip(grid[:-1], grid[1:]):
        u = model(z, np.full(n, s_lo), np.full(n, s_hi), x_t, ts)
        z = z - (s_hi - s_lo) * _check_finite(u, "model output")
    return z


def stmd_sample(model, sched: NoiseSchedule, spec: SamplerSpec, n: int, dim: int,
                observation: LinearObservation | None = None, return_path: bool = False):
    """STMD inference; with ``observation`` each denoised ``x0`` is projected.

    Returns the final ``x0`` batch, or ``(x0, path)`` where ``path`` is the
    list of ``(t, x_t)`` visited (starting at t = 1).
    """
    rng = np.random.default_rng(spec.seed)
    x_t = rng.standard_normal((n, dim))
    grid = _time_grid(spec.n_inf)
    path = [(1.0, x_t)]
    x0 = None
    for t, t_next in zip(grid[:-1], grid[1:]):
        z1 = rng.standard_normal((n, dim))
        x0 = _mean_flow_solve(model, z1, x_t, t, spec.n_mf)
        if observation is not None:
            x0 = observation.project(x0)
        if t_next == 0.0:
            x_t = x0
        else:
            eps = rng.standard_normal((n, dim))
            x_t = bridge_sample(sched, t_next, t, x0, x_t, eps)
        path.append((t_next, x_t))
    return (x0, path) if return_path else x0


def stmd_inpaint(model, sched: NoiseSchedule, spec: SamplerSpec, obs: LinearObservation, n: int):
    return stmd_sample(model, sched, spec, n, obs.M.shape[1], observation=obs)


def ddpm_sample(eps_model, sched: NoiseSchedule, n_steps: int, n: int, dim: int, seed: int = 0):
    """Ancestral sampling with posterior (bridge) variance; ``n_steps`` NFE."""
    if n_steps < 1:
        raise SamplerError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    grid = _time_grid(n_steps)
    zeros = np.zeros(n)
    for t, t_next in zip(grid[:-1], grid[1:]):
        eps_hat = _check_finite(eps_model(x, zeros, zeros, None, np.full(n, t)), "model output")
        alpha, sigma = alpha_sigma(sched, t)
        x0_hat = (x - sigma * eps_hat) / alpha
        if t_next == 0.0:
            x = x0_hat
        else:
            x = bridge_sample(sched, t_next, t, x0_hat, x, rng.standard_normal((n, dim)))
    return x


def fm_euler_sample(v_model, n_steps: int, n: int, dim: int, seed: int = 0):
    """Euler integration of ``dz/ds = v(z, s)`` from s = 1 down to 0."""
    if n_steps < 1:
        raise SamplerError("n_steps must be >= 1")
    z = np.random.default_rng(seed).standard_normal((n, dim))
    grid = _time_grid(n_steps)
    for s_hi, s_lo in zip(grid[:-1], grid[1:]):
        s = np.full(n, s_hi)
        z = z - (s_hi - s_lo) * _check_finite(v_model(z, s, s, None, np.zeros(n)), "model output")
    return z


def meanflow_sample(u_model, n_steps: int, n: int, dim: int, seed: int = 0):
    if n_steps < 1:
        raise SamplerError("n_steps must be >= 1")
    z = np.random.default_rng(seed).standard_normal((n, dim))
    return _mean_flow_solve(u_model, z, None, 0.0, n_steps)


def sample_objective(objective: str, model, sched: NoiseSchedule, n: int, dim: int,
                     n_inf: int = 1, n_mf: int = 1, seed: int = 0,
                     observation: LinearObservation | None = None):
    """Dispatch on the training objective; baselines use ``n_inf * n_mf`` steps."""
    if observation is not None and objective != "stmd":
        raise SamplerError("inpainting is only defined for stmd models")
    if objective == "stmd":
        return stmd_sample(model, sched, SamplerSpec(n_inf, n_mf, seed), n, dim, observation)
    steps = n_inf * n_mf
    if objective == "meanflow":
        return meanflow_sample(model, steps, n, dim, seed)
    if objective == "cfm":
        return fm_euler_sample(model, steps, n, dim, seed)
    if objective == "ddpm":
        return ddpm_sample(model, sched, steps, n, dim, seed)
    raise SamplerError(f"unknown objective {objective!r}")
