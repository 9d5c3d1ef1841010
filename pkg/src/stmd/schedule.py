"""Variance-preserving noise schedule and the closed-form bridge posterior.

Convention: ``t = 0`` is clean data, ``t = 1`` is (approximately) pure noise.
The marginal of the forward process is ``x_t = alpha_t x0 + sigma_t eps`` with
``alpha_t**2 + sigma_t**2 == 1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

# bridge calls with sigma_t**2 below this are rejected instead of regularized
DEGENERATE_VAR = 1e-12


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear VP schedule, ``beta_t = beta_min + t (beta_max - beta_min)``."""

    beta_min: float = 0.1
    beta_max: float = 20.0
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ScheduleError(f"unsupported schedule kind {self.kind!r}")
        if not (self.beta_min >= 0 and self.beta_max >= self.beta_min):
            raise ScheduleError(
                f"need 0 <= beta_min <= beta_max, got {self.beta_min}, {self.beta_max}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    def beta(self, t):
        t = _check_time(t)
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def integral_beta(self, t):
        return integral_beta(self, t)

    def alpha_sigma(self, t):
        return alpha_sigma(self, t)


@dataclass(frozen=True)
class BridgeParams:
    mean_coeff_x0: np.ndarray | float
    mean_coeff_xt: np.ndarray | float
    std: np.ndarray | float


def _check_time(t):
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ScheduleError(f"time outside [0, 1]: {t!r}")
    return arr if arr.ndim else float(arr)


def integral_beta(sched: NoiseSchedule, t):
    """Closed-form ``int_0^t beta(tau) dtau`` for the linear schedule."""
    t = _check_time(t)
    return sched.beta_min * t + 0.5 * (sched.beta_max - sched.beta_min) * t * t


def alpha_sigma(sched: NoiseSchedule, t):
    """Return ``(alpha_t, sigma_t)``; works elementwise on arrays."""
    ib = integral_beta(sched, t)
    alpha = np.exp(-0.5 * ib)
    # -expm1 keeps sigma accurate near t = 0 where alpha**2 -> 1
    sigma = np.sqrt(-np.expm1(-ib))
    if np.ndim(alpha) == 0:
        return float(alpha), float(sigma)
    return alpha, sigma


def _col(a, x):
    """Broadcast a per-row coefficient against a ``(n, d)`` batch."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1 and np.ndim(x) == 2:
        return a[:, None]
    return a


def perturb(sched: NoiseSchedule, x0, t, eps):
    """Sample the forward kernel ``p(x_t | x0)`` with explicit noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    alpha, sigma = alpha_sigma(sched, t)
    return _col(alpha, x0) * x0 + _col(sigma, x0) * eps


def bridge_params(sched: NoiseSchedule, t_prime, t) -> BridgeParams:
    """Gaussian law of ``x_{t'}`` given ``x0`` and ``x_t`` (``t' <= t``)."""
    tp = _check_time(t_prime)
    tt = _check_time(t)
    if np.any(np.asarray(tp) > np.asarray(tt)):
        raise ScheduleError(f"bridge needs t_prime <= t, got {t_prime!r} > {t!r}")
    i_p = np.asarray(integral_beta(sched, tp))
    i_t = np.asarray(integral_beta(sched, tt))
    a_p = np.exp(-0.5 * i_p)
    a_t = np.exp(-0.5 * i_t)
    var_p = -np.expm1(-i_p)
    var_t = -np.expm1(-i_t)
    same = np.asarray(tp) == np.asarray(tt)
    if np.any((var_t < DEGENERATE_VAR) & ~same):
        raise ScheduleError("degenerate bridge: sigma_t is zero while t_prime < t")

    safe = np.where(same, 1.0, var_t)
    # alpha_{t'}^2 - alpha_t^2 without cancellation: a_p^2 (1 - exp(-(I(t) - I(t'))))
    gap = a_p * a_p * -np.expm1(-(i_t - i_p))
    c0 = gap / (a_p * safe)
    ct = a_t * var_p / (a_p * safe)
    std = np.sqrt(np.maximum(var_p * gap / (a_p * a_p * safe), 0.0))
    c0 = np.where(same, 0.0, c0)
    ct = np.where(same, 1.0, ct)
    std = np.where(same, 0.0, std)
    if c0.ndim == 0:
        return BridgeParams(float(c0), float(ct), float(std))
    return BridgeParams(c0, ct, std)


def bridge_sample(sched: NoiseSchedule, t_prime, t, x0, xt, eps):
    """Draw ``x_{t'} ~ p(x_{t'} | x0, x_t)`` given standard normal ``eps``."""
    x0 = np.asarray(x0, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if not (x0.shape == xt.shape == eps.shape):
        raise ValueError(f"shape mismatch: {x0.shape}, {xt.shape}, {eps.shape}")
    bp = bridge_params(sched, t_prime, t)
    out = _col(bp.mean_coeff_x0, x0) * x0 + _col(bp.mean_coeff_xt, x0) * xt
    if np.any(np.asarray(bp.std) > 0):
        out = out + _col(bp.std, x0) * eps
    return out
