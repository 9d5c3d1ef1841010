"""Flow matching and Mean Flow losses, the (r, s) sampler, adaptive weighting.

Every ``*_residual`` helper returns the residual ``delta = u - sg(target)``
together with the network cache so the caller can backpropagate through
``u`` only. Targets are plain arrays and therefore constants for
:func:`stmd.network.backward_cached`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network


@dataclass(frozen=True)
class RsSamplerCfg:
    """Logit-normal sampler for ``0 <= r <= s <= 1``.

    ``p_equal`` is the probability of forcing ``r = s``.
    """

    mu: float = -0.4
    sigma: float = 1.0
    p_equal: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.p_equal <= 1.0:
            raise ValueError(f"p_equal must be in [0, 1], got {self.p_equal}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass
class LossBreakdown:
    weighted_loss: float
    raw_loss: float
    mean_delta_sq: float
    residuals: np.ndarray | None = None


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def sample_rs(rng: np.random.Generator, cfg: RsSamplerCfg, n: int):
    a = _sigmoid(rng.normal(cfg.mu, cfg.sigma, size=n))
    b = _sigmoid(rng.normal(cfg.mu, cfg.sigma, size=n))
    s = np.maximum(a, b)
    r = np.minimum(a, b)
    equal = rng.uniform(size=n) < cfg.p_equal
    r = np.where(equal, s, r)
    return r, s


def adaptive_weight(delta_sq, c: float = 0.01, p: float = 1.0):
    """``(delta_sq + c) ** -p``; callers treat the result as a constant."""
    if c <= 0:
        raise ValueError(f"adaptive weight needs c > 0, got {c}")
    delta_sq = np.asarray(delta_sq, dtype=np.float64)
    if np.any(delta_sq < 0):
        raise ValueError("delta_sq must be nonnegative")
    w = (delta_sq + c) ** (-p)
    return float(w) if w.ndim == 0 else w


def cfm_residual(v_pred, z0, z1):
    v_pred, z0, z1 = (np.asarray(a, dtype=np.float64) for a in (v_pred, z0, z1))
    if not (v_pred.shape == z0.shape == z1.shape):
        raise ValueError(f"shape mismatch: {v_pred.shape}, {z0.shape}, {z1.shape}")
    return v_pred - (z1 - z0)


def interpolate(z0, z1, s):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    return (1.0 - s) * z0 + s * z1


def _mf_core(net, z_s, r, s, x, t, tangent, velocity):
    """Shared Mean Flow residual: target = velocity - (s - r) du/ds."""
    u, du, cache = network.jvp_cached(net, z_s, r, s, x, t, tangent, 0.0, 1.0, None, 0.0)
    gap = np.asarray(s, dtype=np.float64) - np.asarray(r, dtype=np.float64)
    if gap.ndim == 1:
        gap = gap[:, None]
    target = velocity - gap * du
    return u - target, target, cache


def mf_target_and_residual(net, z_s, r, s, z0, z1, return_cache=False):
    """Unconditional Mean Flow (conditional-velocity form).

    The flow variable's tangent is ``z1 - z0``; the net sees ``x = 0, t = 0``.
    """
    v = np.asarray(z1, dtype=np.float64) - np.asarray(z0, dtype=np.float64)
    delta, target, cache = _mf_core(net, z_s, r, s, np.zeros_like(v), 0.0, v, v)
    return (delta, target, cache) if return_cache else (delta, target)


def mf_marginal_residual(net, z_s, r, s, velocity, return_cache=False):
    """Mean Flow residual against a known marginal velocity ``v_s(z_s)``."""
    v = np.asarray(velocity, dtype=np.float64)
    delta, target, cache = _mf_core(net, z_s, r, s, np.zeros_like(v), 0.0, v, v)
    return (delta, target, cache) if return_cache else (delta, target)


def dcmf_target_and_residual(net, z_s, r, s, x_t, t, x0, z1, return_cache=False):
    """Conditional (diffusion) Mean Flow residual, conditioned on ``(x_t, t)``."""
    v = np.asarray(z1, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    delta, target, cache = _mf_core(net, z_s, r, s, x_t, t, v, v)
    return (delta, target, cache) if return_cache else (delta, target)


def dmf_marginal_residual(net, z_s, r, s, x_t, t, velocity, return_cache=False):
    """Conditional Mean Flow residual against a known ``v_s(z_s | x_t, t)``."""
    v = np.asarray(velocity, dtype=np.float64)
    delta, target, cache = _mf_core(net, z_s, r, s, x_t, t, v, v)
    return (delta, target, cache) if return_cache else (delta, target)


def weighted_loss(delta, c=0.01, p=1.0, per_sample=False, keep_residuals=False):
    """Adaptive-weighted squared loss and its gradient w.r.t. the prediction.

    Returns ``(LossBreakdown, upstream)`` where ``upstream`` is
    d(weighted_loss)/du with the weight held constant.
    """
    delta = np.asarray(delta, dtype=np.float64)
    n = delta.shape[0]
    sq = np.einsum("ij,ij->i", delta, delta)
    raw = float(sq.mean())
    if per_sample:
        w = adaptive_weight(sq, c, p)
        weighted = float((w * sq).mean())
        upstream = (2.0 / n) * w[:, None] * delta
    else:
        w = adaptive_weight(raw, c, p)
        weighted = w * raw
        upstream = (2.0 * w / n) * delta
    info = LossBreakdown(weighted, raw, raw, sq if keep_residuals else None)
    return info, upstream


def raw_loss_grad(net, delta, cache):
    """Parameter gradient of ``mean ||delta||^2`` (unweighted)."""
    n = delta.shape[0]
    return network.backward_cached(net, cache, (2.0 / n) * delta)
