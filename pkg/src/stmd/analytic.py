"""Closed-form velocities, flow maps and posteriors for Gaussian(-mixture) data.

Data ``z0`` is paired with prior ``z1 ~ N(0, I)`` through the straight-line
interpolant ``z_s = (1 - s) z0 + s z1``. For an isotropic Gaussian source
``N(m, v I)`` the marginal velocity is affine in ``z_s`` and the Mean Flow
average velocity has a closed form, which makes these functions usable as
exact "models" in tests and bound checks.
"""

from __future__ import annotations

import numpy as np

from .schedule import NoiseSchedule, alpha_sigma


def _col(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def _spread(v, s):
    """Variance of ``z_s`` per coordinate, ``(1 - s)^2 v + s^2``."""
    return (1.0 - s) ** 2 * v + s * s


def _gain(v, s):
    """Slope ``k(s)`` of the linear velocity field for source variance ``v``."""
    den = _spread(v, s)
    if np.any(den <= 0):
        raise ValueError("degenerate variance: (1-s)^2 v + s^2 == 0")
    return (s - (1.0 - s) * v) / den


def gauss_velocity(sigma0, s, z, mean=None):
    """``E[z1 - z0 | z_s = z]`` for ``z0 ~ N(mean, sigma0^2 I)``."""
    if np.any(np.asarray(sigma0) <= 0):
        raise ValueError("sigma0 must be positive")
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(sigma0, dtype=np.float64) ** 2
    s = np.asarray(s, dtype=np.float64)
    m = np.zeros_like(z) if mean is None else np.asarray(mean, dtype=np.float64)
    k = _col(_gain(v, s)) if z.ndim == 2 else _gain(v, s)
    return k * (z - _col(1.0 - s) * m if z.ndim == 2 else z - (1.0 - s) * m) - m


def gauss_meanflow_u(sigma0, r, s, z, mean=None, var=None):
    """Average velocity ``(z_s - z_r) / (s - r)`` along the exact flow.

    ``y = z - (1 - s) m`` obeys ``dy/ds = k(s) y`` with
    ``int_r^s k = 0.5 log(D(s)/D(r))``, ``D = (1-s)^2 v + s^2``.
    ``var`` overrides ``sigma0**2`` (allows ``v = 0``).
    """
    z = np.asarray(z, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if np.any(r > s):
        raise ValueError("gauss_meanflow_u needs r <= s")
    v = np.asarray(sigma0, dtype=np.float64) ** 2 if var is None else np.asarray(var, dtype=np.float64)
    m = np.zeros_like(z) if mean is None else np.asarray(mean, dtype=np.float64)
    y = z - _c(1.0 - s, z) * m
    return _c(_avg_gain(v, r, s), z) * y - m


def _c(a, z):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if (a.ndim == 1 and z.ndim == 2) else a


def _avg_gain(v, r, s):
    """``(1 - rho) / (s - r)`` with ``rho = sqrt(D(r)/D(s))``; ``k(s)`` at r = s."""
    h = s - r
    small = h < 1e-6
    hs = np.where(small, 1.0, h)
    rho = np.sqrt(_spread(v, r) / _spread(v, s))
    exact = -np.expm1(np.log(rho)) / hs
    # second-order expansion about r = s
    ks = _gain(v, s)
    series = ks - 0.5 * (_dgain(v, s) + ks * ks) * h
    return np.where(small, series, exact)


def _dgain(v, tau):
    d = _spread(v, tau)
    d1 = 2.0 * (tau - (1.0 - tau) * v)
    d2 = 2.0 * (1.0 + v)
    return (d2 * d - d1 * d1) / (2.0 * d * d)


def _avg_gain_partials(v, r, s):
    """``(dA/ds, dA/dr)`` for ``A = _avg_gain``."""
    h = s - r
    small = h < 1e-6
    hs = np.where(small, 1.0, h)
    rho = np.sqrt(_spread(v, r) / _spread(v, s))
    one_minus = -np.expm1(np.log(rho))
    ks, kr = _gain(v, s), _gain(v, r)
    d_s = (rho * ks * hs - one_minus) / (hs * hs)
    d_r = (-rho * kr * hs + one_minus) / (hs * hs)
    kp = _dgain(v, s)
    d_s = np.where(small, 0.5 * (kp - ks * ks), d_s)
    d_r = np.where(small, 0.5 * (kp + ks * ks), d_r)
    return d_s, d_r


def gauss_meanflow_jvp(var, mean, r, s, z, dz, dr, ds):
    """Directional derivative of :func:`gauss_meanflow_u` in ``(z, r, s)``."""
    z = np.asarray(z, dtype=np.float64)
    m = np.zeros_like(z) if mean is None else np.asarray(mean, dtype=np.float64)
    n = z.shape[0]
    r, s, dr, ds = (np.broadcast_to(np.asarray(a, dtype=np.float64), (n,)) for a in (r, s, dr, ds))
    v = np.broadcast_to(np.asarray(var, dtype=np.float64), (n,))
    y = z - (1.0 - s)[:, None] * m
    dy = np.asarray(dz, dtype=np.float64) + ds[:, None] * m
    a = _avg_gain(v, r, s)
    a_s, a_r = _avg_gain_partials(v, r, s)
    return a[:, None] * dy + (a_s * ds + a_r * dr)[:, None] * y


# --- Gaussian-mixture posteriors -------------------------------------------

def gmm_posterior(means, stds, weights, sched: NoiseSchedule, x_t, t):
    """Posterior ``p(x0 | x_t)`` for isotropic GMM data.

    Returns ``(post_means (n,K,d), post_vars (n,K), log_w (n,K))`` with
    normalized log weights.
    """
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    tau2 = np.asarray(stds, dtype=np.float64) ** 2
    logpi = np.log(np.asarray(weights, dtype=np.float64))
    x_t = np.asarray(x_t, dtype=np.float64)
    n, d = x_t.shape
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    alpha, sigma = alpha_sigma(sched, t)
    alpha = np.asarray(alpha)[:, None]
    var_t = np.asarray(sigma)[:, None] ** 2
    # marginal of x_t under component k: N(alpha mu_k, (alpha^2 tau_k^2 + sigma^2) I)
    c = alpha * alpha * tau2[None, :] + var_t
    diff = x_t[:, None, :] - alpha[:, :, None] * means[None, :, :]
    logw = logpi[None, :] - 0.5 * np.einsum("nkd,nkd->nk", diff, diff) / c - 0.5 * d * np.log(2 * np.pi * c)
    logw -= _logsumexp(logw)[:, None]
    post_var = tau2[None, :] * var_t / c
    post_mean = (var_t[:, :, None] * means[None, :, :]
                 + (alpha * tau2[None, :])[:, :, None] * x_t[:, None, :]) / c[:, :, None]
    return post_mean, post_var, logw


def _logsumexp(a):
    mx = a.max(axis=1)
    return mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))


def mixture_velocity(post_means, post_vars, log_w, s, z):
    """``E[z1 - x0 | z_s = z]`` when ``x0`` is a per-row isotropic mixture."""
    z = np.asarray(z, dtype=np.float64)
    n, d = z.shape
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (n,))[:, None]
    c = _spread(post_vars, s)
    gain = (s - (1.0 - s) * post_vars) / c
    centered = z[:, None, :] - (1.0 - s)[:, :, None] * post_means
    logr = log_w - 0.5 * np.einsum("nkd,nkd->nk", centered, centered) / c - 0.5 * d * np.log(c)
    logr -= _logsumexp(logr)[:, None]
    resp = np.exp(logr)
    comp = gain[:, :, None] * centered - post_means
    return np.einsum("nk,nkd->nd", resp, comp)


# --- model wrappers ----------------------------------------------------------

class GaussianMeanFlow:
    """Exact unconditional Mean Flow for ``z0 ~ N(0, sigma0^2 I)``."""

    def __init__(self, sigma0: float):
        self.sigma0 = float(sigma0)

    def __call__(self, z, r, s, x=None, t=None):
        return gauss_meanflow_u(self.sigma0, _b(r, z), _b(s, z), z)

    def jvp(self, z, r, s, x, t, dz, dr=0.0, ds=0.0, dx=None, dt=0.0):
        _no_cond_tangent(dx, dt)
        u = self(z, r, s)
        return u, gauss_meanflow_jvp(self.sigma0 ** 2, None, r, s, z, dz, dr, ds)


class GaussianPosteriorMeanFlow:
    """Exact conditional Mean Flow for ``p(x0 | x_t)`` with Gaussian data."""

    def __init__(self, sigma0: float, sched: NoiseSchedule):
        self.sigma0 = float(sigma0)
        self.sched = sched

    def posterior(self, x_t, t):
        pm, pv, _ = gmm_posterior(np.zeros((1, np.shape(x_t)[1])), [self.sigma0], [1.0],
                                  self.sched, x_t, t)
        return pm[:, 0, :], pv[:, 0]

    def __call__(self, z, r, s, x, t):
        m, v = self.posterior(x, _b(t, z))
        return gauss_meanflow_u(None, _b(r, z), _b(s, z), z, mean=m, var=v)

    def jvp(self, z, r, s, x, t, dz, dr=0.0, ds=0.0, dx=None, dt=0.0):
        _no_cond_tangent(dx, dt)
        m, v = self.posterior(x, _b(t, z))
        u = gauss_meanflow_u(None, _b(r, z), _b(s, z), z, mean=m, var=v)
        return u, gauss_meanflow_jvp(v, m, r, s, z, dz, dr, ds)

    def velocity(self, s, z, x_t, t):
        m, v = self.posterior(x_t, _b(t, z))
        return gauss_meanflow_u(None, _b(s, z), _b(s, z), z, mean=m, var=v)


class GaussianVelocity:
    """Exact flow-matching velocity ``v_s(z)`` (ignores ``r``, ``x``, ``t``)."""

    def __init__(self, sigma0: float):
        self.sigma0 = float(sigma0)

    def __call__(self, z, r, s, x=None, t=None):
        return gauss_velocity(self.sigma0, _b(s, z), z)


class GaussianEpsilon:
    """Optimal noise predictor ``(x_t - alpha_t E[x0|x_t]) / sigma_t``."""

    def __init__(self, sigma0: float, sched: NoiseSchedule):
        self.sigma0 = float(sigma0)
        self.sched = sched

    def __call__(self, z, r, s, x, t):
        t = _b(t, z)
        alpha, sigma = alpha_sigma(self.sched, t)
        v0 = self.sigma0 ** 2
        # E[x0 | x_t] = alpha v0 x_t / (alpha^2 v0 + sigma^2)
        shrink = alpha * v0 / (alpha * alpha * v0 + sigma * sigma)
        return (z - (alpha * shrink)[:, None] * z) / np.asarray(sigma)[:, None]


def _b(a, z):
    return np.broadcast_to(np.asarray(a, dtype=np.float64), (np.shape(z)[0],))


def _no_cond_tangent(dx, dt):
    if (dx is not None and np.any(np.asarray(dx) != 0)) or np.any(np.asarray(dt) != 0):
        raise NotImplementedError("analytic JVP only supports (z, r, s) tangents")
