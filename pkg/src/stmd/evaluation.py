"""Distribution distances and numeric checks of the Wasserstein bounds.

Exact W2 between equal-size empirical measures is an assignment problem,
solved here with :func:`scipy.optimize.linear_sum_assignment`. The plain
two-sample estimate is biased upwards (two independent samples of the
*same* law have positive W2^2), so bound checks report a floor-corrected
value next to the raw one; see :func:`w2_vs_sampler`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from . import analytic, network
from .data import DatasetSpec, second_moment
from .objectives import interpolate
from .sample import SamplerSpec, stmd_sample
from .schedule import NoiseSchedule, alpha_sigma, perturb

MAX_EXACT_N = 4096


class CapacityError(ValueError):
    pass


@dataclass
class W2Report:
    value: float
    n: int
    method: str


@dataclass
class BoundReport:
    name: str
    epsilon_hat: float
    epsilon_se: float
    w2_sq: float
    w2_se: float
    bound_rhs: float
    satisfied: bool
    slack: float
    details: dict = field(default_factory=dict)

    def to_row(self) -> dict:
        row = asdict(self)
        row.update(row.pop("details"))
        return row

    def summary(self) -> str:
        verdict = "SATISFIED" if self.satisfied else "VIOLATED"
        return (f"{self.name}: W2^2 = {self.w2_sq:.5f} +- {self.w2_se:.5f}, "
                f"bound = {self.bound_rhs:.5f} (eps = {self.epsilon_hat:.5f} +- "
                f"{self.epsilon_se:.5f}), slack = {self.slack:.5f} -> {verdict}")


# --- distances -------------------------------------------------------------------

def w2_exact(A, B) -> W2Report:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape != B.shape:
        raise ValueError(f"w2_exact needs equal-size point sets, got {A.shape} and {B.shape}")
    n = A.shape[0]
    if n > MAX_EXACT_N:
        raise CapacityError(f"exact assignment limited to n <= {MAX_EXACT_N}, got {n}")
    cost = cdist(A, B, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return W2Report(float(cost[rows, cols].sum() / n), n, "exact_assignment")


def w2_gaussian(m1, s1, m2, s2) -> float:
    """Closed-form W2^2 between isotropic ``N(m1, s1^2 I)`` and ``N(m2, s2^2 I)``."""
    if s1 < 0 or s2 < 0:
        raise ValueError("scales must be nonnegative")
    m1 = np.atleast_1d(np.asarray(m1, dtype=np.float64))
    m2 = np.atleast_1d(np.asarray(m2, dtype=np.float64))
    diff = m1 - m2
    return float(diff @ diff + m1.size * (s1 - s2) ** 2)


def _psd_sqrt(S):
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def w2_gaussian_moments(mean1, cov1, mean2, cov2) -> float:
    """Bures-Wasserstein W2^2 between Gaussians with full covariances."""
    diff = np.asarray(mean1) - np.asarray(mean2)
    r2 = _psd_sqrt(np.asarray(cov2))
    cross = _psd_sqrt(r2 @ cov1 @ r2)
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))


def w2_gaussian_fit(samples, mean, cov) -> W2Report:
    """W2^2 between the moment-matched Gaussian of ``samples`` and ``N(mean, cov)``."""
    samples = np.atleast_2d(samples)
    value = w2_gaussian_moments(samples.mean(axis=0), np.atleast_2d(np.cov(samples.T)), mean, cov)
    return W2Report(value, samples.shape[0], "gaussian_closed_form")


def _mean_pairwise(A, B, same, chunk=1024):
    total = 0.0
    for i in range(0, A.shape[0], chunk):
        total += cdist(A[i:i + chunk], B, "euclidean").sum()
    if same:
        n = A.shape[0]
        return total / (n * (n - 1))
    return total / (A.shape[0] * B.shape[0])


def energy_distance(A, B) -> float:
    """``2 E|a-b| - E|a-a'| - E|b-b'|`` with U-statistics for the within terms."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    A = A[:, None] if A.ndim == 1 else A
    B = B[:, None] if B.ndim == 1 else B
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("energy distance needs non-empty sets")
    cross = _mean_pairwise(A, B, same=False)
    aa = _mean_pairwise(A, A, same=True) if A.shape[0] > 1 else 0.0
    bb = _mean_pairwise(B, B, same=True) if B.shape[0] > 1 else 0.0
    return float(2.0 * cross - aa - bb)


def w2_vs_sampler(generate, draw_data, n: int, n_rep: int = 4, seed: int = 0) -> dict:
    """Floor-corrected W2^2 of a generator against a data sampler.

    For each repetition ``i``: ``raw_i = W2^2(gen_i, data_i)`` and
    ``floor_i = W2^2(data_i', data_i)`` (same reference set, so the two
    share most of their sampling noise). Reports ``mean(raw - floor)``
    with its standard error, plus the raw and floor means.
    """
    raw, floor = [], []
    for i in range(n_rep):
        rng = np.random.default_rng([seed, i])
        gen = generate(i)
        ref = draw_data(rng, n)
        null = draw_data(rng, n)
        raw.append(w2_exact(gen, ref).value)
        floor.append(w2_exact(null, ref).value)
    raw, floor = np.array(raw), np.array(floor)
    diff = raw - floor
    se = float(diff.std(ddof=1) / np.sqrt(n_rep)) if n_rep > 1 else float("nan")
    return {"w2": float(diff.mean()), "w2_se": se, "w2_raw": float(raw.mean()),
            "w2_raw_se": float(raw.std(ddof=1) / np.sqrt(n_rep)) if n_rep > 1 else float("nan"),
            "w2_floor": float(floor.mean()), "n": n, "n_rep": n_rep}


# --- Mean Flow residuals -----------------------------------------------------------

def midpoint_grid(k: int = 64) -> np.ndarray:
    return (np.arange(k) + 0.5) / k


def _stratified(per_node):
    """Mean and standard error over grid nodes of per-node sample arrays."""
    means = np.array([p.mean() for p in per_node])
    var = np.array([p.var(ddof=1) / p.size for p in per_node])
    return float(means.mean()), float(np.sqrt(var.sum()) / len(per_node)), means


def estimate_epsilon(model, velocity_oracle, draw_data, s_grid=None, n_mc: int = 4096,
                     seed: int = 0):
    """``E_s[eps_{0,s}]`` for an unconditional Mean Flow model.

    ``velocity_oracle(s, z)`` is the true marginal velocity; the total
    derivative uses it as the tangent of ``z_s``. Returns
    ``(eps_hat, standard_error, per_node_means)``.
    """
    s_grid = midpoint_grid() if s_grid is None else np.asarray(s_grid, dtype=np.float64)
    rng = np.random.default_rng(seed)
    per_node = []
    for s in s_grid:
        z0 = draw_data(rng, n_mc)
        z1 = rng.standard_normal(z0.shape)
        ss = np.full(n_mc, s)
        z_s = interpolate(z0, z1, ss)
        v = velocity_oracle(ss, z_s)
        u, du = _jvp(model, z_s, np.zeros(n_mc), ss, None, 0.0, v)
        res = u - (v - ss[:, None] * du)
        per_node.append(np.einsum("ij,ij->i", res, res))
    return _stratified(per_node)


def _jvp(model, z, r, s, x, t, v):
    if isinstance(model, network.MlpNet):
        return network.jvp(model, z, r, s, x, t, v, 0.0, 1.0, None, 0.0)
    return model.jvp(z, r, s, x, t, v, 0.0, 1.0, None, 0.0)


def estimate_gamma(model, sched: NoiseSchedule, dataset: DatasetSpec, t: float = 1.0,
                   s_grid=None, n_mc: int = 4096, seed: int = 0, x_t=None):
    """``E_{s, x_t}[gamma(0, s, t, x_t)]`` for a conditional model on GMM-like data.

    ``x_t`` is drawn from the forward marginal unless fixed (one row, repeated);
    with a fixed ``x_t`` the clean point is drawn from the exact posterior.
    """
    means, stds, weights = dataset.mixture()
    s_grid = midpoint_grid() if s_grid is None else np.asarray(s_grid, dtype=np.float64)
    rng = np.random.default_rng(seed)
    tt = np.full(n_mc, float(t))
    per_node = []
    for s in s_grid:
        if x_t is None:
            x0 = dataset.sample(rng, n_mc)
            xt = perturb(sched, x0, tt, rng.standard_normal(x0.shape))
            post = analytic.gmm_posterior(means, stds, weights, sched, xt, tt)
        else:
            xt = np.repeat(np.atleast_2d(x_t), n_mc, axis=0)
            post = analytic.gmm_posterior(means, stds, weights, sched, xt, tt)
            x0 = _sample_posterior(post, rng)
        z1 = rng.standard_normal(x0.shape)
        ss = np.full(n_mc, s)
        z_s = interpolate(x0, z1, ss)
        v = analytic.mixture_velocity(*post, ss, z_s)
        u, du = _jvp(model, z_s, np.zeros(n_mc), ss, xt, tt, v)
        res = u - (v - ss[:, None] * du)
        per_node.append(np.einsum("ij,ij->i", res, res))
    return _stratified(per_node)


def _sample_posterior(post, rng):
    pm, pv, logw = post
    n, k, d = pm.shape
    cdf = np.cumsum(np.exp(logw), axis=1)
    idx = np.minimum((rng.uniform(size=(n, 1)) > cdf).sum(axis=1), k - 1)
    rows = np.arange(n)
    return pm[rows, idx] + np.sqrt(pv[rows, idx])[:, None] * rng.standard_normal((n, d))


# --- bound checks ---------------------------------------------------------------

def _combined(*ses):
    return float(np.sqrt(sum(s * s for s in ses)))


def check_meanflow_bound(model, sigma0: float, n: int = 2048, dim: int = 2, seed: int = 0,
                   n_rep: int = 4, n_mc: int = 4096, s_grid=None) -> BoundReport:
    """One-step Mean Flow samples vs ``N(0, sigma0^2 I)`` against ``e * eps``."""
    eps_hat, eps_se, _ = estimate_epsilon(
        model, lambda s, z: analytic.gauss_velocity(sigma0, s, z),
        lambda rng, m: sigma0 * rng.standard_normal((m, dim)), s_grid, n_mc, seed)

    def generate(i):
        z1 = np.random.default_rng([seed, 1000 + i]).standard_normal((n, dim))
        return z1 - model(z1, np.zeros(n), np.ones(n), None, np.zeros(n))

    w2 = w2_vs_sampler(generate, lambda rng, m: sigma0 * rng.standard_normal((m, dim)),
                       n, n_rep, seed + 1)
    fit = w2_gaussian_fit(generate(0), np.zeros(dim), sigma0 ** 2 * np.eye(dim))
    bound = math.e * eps_hat
    se = _combined(w2["w2_se"], math.e * eps_se)
    satisfied = w2["w2"] <= bound + 3.0 * se
    return BoundReport("meanflow_one_step", eps_hat, eps_se, w2["w2"], w2["w2_se"], bound,
                       bool(satisfied), bound - w2["w2"],
                       {"w2_raw": w2["w2_raw"], "w2_floor": w2["w2_floor"],
                        "w2_gaussian_fit": fit.value, "combined_se": se, "n": n})


def lipschitz_probe(model, dim: int, sched: NoiseSchedule, dataset: DatasetSpec | None = None,
                    n_pairs: int = 1024, n_z: int = 256, seed: int = 0) -> float:
    """Largest observed ``sqrt(E_z||u(z,x1) - u(z,x1')||^2) / ||x1 - x1'||``.

    Half the pairs are independent standard normals; the other half follow
    the coupling ``x1 = alpha_1 x0 + sigma_1 eps`` vs ``x1' = eps`` when a
    dataset is given. The result lower-bounds the true constant.
    """
    rng = np.random.default_rng(seed)
    a1, s1 = alpha_sigma(sched, 1.0)
    best = 0.0
    for i in range(n_pairs):
        if dataset is not None and i % 2:
            x0 = dataset.sample(rng, 1)
            eps = rng.standard_normal((1, dim))
            xa, xb = a1 * x0 + s1 * eps, eps
        else:
            xa, xb = rng.standard_normal((2, 1, dim))
        gap = float(np.linalg.norm(xa - xb))
        if gap == 0.0:
            continue
        z = rng.standard_normal((n_z, dim))
        ones, zeros = np.ones(n_z), np.zeros(n_z)
        ua = model(z, zeros, ones, np.repeat(xa, n_z, axis=0), ones)
        ub = model(z, zeros, ones, np.repeat(xb, n_z, axis=0), ones)
        diff = ua - ub
        best = max(best, float(np.sqrt(np.mean(np.einsum("ij,ij->i", diff, diff)))) / gap)
    return best


def check_stmd_bound(model, sched: NoiseSchedule, dataset: DatasetSpec, n: int = 2048,
                     seed: int = 0, n_rep: int = 4, n_pairs: int = 1024, n_z: int = 256,
                     n_mc: int = 4096, s_grid=None, safety: float = 2.0) -> BoundReport:
    """Single-outer-step STMD samples vs data against ``2 (L^2 (alpha_1^2 m2 + (1 - sigma_1)^2 d) + e eps_1)``."""
    dim = dataset.dim
    l_probe = lipschitz_probe(model, dim, sched, dataset, n_pairs, n_z, seed)
    l_safe = safety * l_probe
    m2 = second_moment(dataset)
    a1, s1 = alpha_sigma(sched, 1.0)
    eps1, eps1_se, _ = estimate_gamma(model, sched, dataset, 1.0, s_grid, n_mc, seed)

    def generate(i):
        return stmd_sample(model, sched, SamplerSpec(1, 1, seed=10_000 + seed * 97 + i), n, dim)

    w2 = w2_vs_sampler(generate, dataset.sample, n, n_rep, seed + 1)
    prior_term = a1 * a1 * m2 + (1.0 - s1) ** 2 * dim
    bound = 2.0 * (l_safe ** 2 * prior_term + math.e * eps1)
    se = _combined(w2["w2_se"], 2.0 * math.e * eps1_se)
    satisfied = w2["w2"] <= bound + 3.0 * se
    return BoundReport("stmd_one_step", eps1, eps1_se, w2["w2"], w2["w2_se"], bound,
                       bool(satisfied), bound - w2["w2"],
                       {"lipschitz_probe": l_probe, "lipschitz_used": l_safe, "m2": m2,
                        "alpha1": a1, "sigma1": s1, "prior_term": prior_term,
                        "bound_probe_L": 2.0 * (l_probe ** 2 * prior_term + math.e * eps1),
                        "w2_raw": w2["w2_raw"], "w2_floor": w2["w2_floor"],
                        "combined_se": se, "n": n})


def check_posterior_bound_gaussian(model, sigma0: float, sched: NoiseSchedule, points,
                              n: int = 1024, seed: int = 0, n_rep: int = 3,
                              n_mc: int = 2048, s_grid=None) -> list[BoundReport]:
    """Per-``(t, x_t)`` check of ``W2^2(p_hat(x0|x_t), p(x0|x_t)) <= e E_s gamma``."""
    dataset = DatasetSpec("gaussian", dim=np.shape(points[0][1])[-1], sigma0=sigma0)
    exact = analytic.GaussianPosteriorMeanFlow(sigma0, sched)
    out = []
    for j, (t, x_t) in enumerate(points):
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        dim = x_t.shape[1]
        gam, gam_se, _ = estimate_gamma(model, sched, dataset, t, s_grid, n_mc, seed + j, x_t=x_t)
        m, v = exact.posterior(x_t, np.array([t]))
        tt = np.full(n, float(t))
        xs = np.repeat(x_t, n, axis=0)

        def generate(i, _xs=xs, _tt=tt):
            z1 = np.random.default_rng([seed, j, i]).standard_normal((n, dim))
            return z1 - model(z1, np.zeros(n), np.ones(n), _xs, _tt)

        def draw(rng, k, _m=m, _v=v):
            return _m + np.sqrt(_v)[:, None] * rng.standard_normal((k, dim))

        w2 = w2_vs_sampler(generate, draw, n, n_rep, seed + 7 * j)
        bound = math.e * gam
        se = _combined(w2["w2_se"], math.e * gam_se)
        out.append(BoundReport(f"posterior[t={t:.3f}]", gam, gam_se, w2["w2"], w2["w2_se"],
                               bound, bool(w2["w2"] <= bound + 3.0 * se), bound - w2["w2"],
                               {"t": t, "w2_raw": w2["w2_raw"], "w2_floor": w2["w2_floor"],
                                "combined_se": se}))
    return out


def alpha1_threshold(m2: float, d: int, eps1: float) -> float:
    """Largest ``alpha_1`` with ``alpha_1^2 m2 + alpha_1^4 d <= eps1``."""
    if m2 < 0 or d < 1 or eps1 <= 0:
        raise ValueError(f"need m2 >= 0, d >= 1, eps1 > 0; got {m2}, {d}, {eps1}")
    disc = math.sqrt(m2 * m2 + 4.0 * eps1 * d)
    # (-m2 + disc) / (2d) rewritten to avoid cancellation for large m2
    return math.sqrt(2.0 * eps1 / (m2 + disc))


# --- gradient checks -----------------------------------------------------------------

def jvp_fd_suite(net_count: int = 50, tol: float = 1e-6, seed: int = 0, h: float = 1e-4,
                 batch: int = 8) -> dict:
    """Finite-difference checks of ``jvp`` and ``backward`` on random nets."""
    rng = np.random.default_rng(seed)
    jvp_err, grad_err, dual_err = [], [], []
    zero_ok = True
    for k in range(net_count):
        d = int(rng.integers(1, 4))
        hidden = tuple(int(w) for w in rng.integers(8, 65, size=2))
        embed = 2 * int(rng.integers(2, 9))
        net = network.init_net(int(rng.integers(2**31)), network.make_widths(d, hidden, embed), embed)
        z, x = rng.standard_normal((2, batch, d))
        r = rng.uniform(0.0, 0.5, batch)
        s = r + rng.uniform(0.0, 0.5, batch)
        t = rng.uniform(size=batch)
        dz, dx = rng.standard_normal((2, batch, d))
        dr, ds, dt = rng.standard_normal((3, batch))

        u, du = network.jvp(net, z, r, s, x, t, dz, dr, ds, dx, dt)
        plus = network.forward(net, z + h * dz, r + h * dr, s + h * ds, x + h * dx, t + h * dt)
        minus = network.forward(net, z - h * dz, r - h * dr, s - h * ds, x - h * dx, t - h * dt)
        fd = (plus - minus) / (2 * h)
        jvp_err.append(float(np.linalg.norm(fd - du) / np.linalg.norm(du)))

        _, du0 = network.jvp(net, z, r, s, x, t, np.zeros_like(dz), 0.0, 0.0, None, 0.0)
        zero_ok &= bool(np.all(du0 == 0.0))

        w = rng.standard_normal(u.shape)
        grad, gin = network.backward(net, z, r, s, x, t, w, input_grad=True)
        direction = rng.standard_normal(net.params.shape)
        direction /= np.linalg.norm(direction)
        lp = np.sum(w * network.forward(net.copy(net.params + h * direction), z, r, s, x, t))
        lm = np.sum(w * network.forward(net.copy(net.params - h * direction), z, r, s, x, t))
        exact = float(grad @ direction)
        grad_err.append(abs((lp - lm) / (2 * h) - exact) / abs(exact))

        lhs = float(np.sum(w * du))
        rhs = float(np.sum(gin["z"] * dz) + np.sum(gin["x"] * dx) + gin["r"] @ dr
                    + gin["s"] @ ds + gin["t"] @ dt)
        dual_err.append(abs(lhs - rhs) / abs(lhs))
    report = {"nets": net_count, "max_jvp_rel_err": max(jvp_err),
              "max_grad_rel_err": max(grad_err), "max_jvp_vjp_rel_err": max(dual_err),
              "zero_tangent_exact": zero_ok, "tol": tol}
    report["passed"] = bool(zero_ok and report["max_jvp_rel_err"] < tol
                            and report["max_grad_rel_err"] < tol
                            and report["max_jvp_vjp_rel_err"] < 1e-10)
    return report


def loss_gradients_gaussian(net, sigma0: float, n: int = 200_000, seed: int = 0,
                            sched: NoiseSchedule | None = None, chunk: int = 10_000,
                            rs=None):
    """Raw-loss gradients with the conditional and the marginal velocity target.

    Both use the same draws (common random numbers) on ``N(0, sigma0^2 I)``
    data. With ``sched`` the conditional (diffusion) variant is used: the net
    is conditioned on ``x_t`` and the marginal target uses the exact
    Gaussian posterior velocity. Returns ``(grad_conditional, grad_marginal)``.
    """
    from .objectives import (RsSamplerCfg, dcmf_target_and_residual, dmf_marginal_residual,
                             mf_marginal_residual, mf_target_and_residual, raw_loss_grad,
                             sample_rs)
    rs = rs or RsSamplerCfg()
    dim = net.data_dim
    rng = np.random.default_rng(seed)
    post = analytic.GaussianPosteriorMeanFlow(sigma0, sched) if sched is not None else None
    g_cond = np.zeros_like(net.params)
    g_marg = np.zeros_like(net.params)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        x0 = sigma0 * rng.standard_normal((m, dim))
        z1 = rng.standard_normal((m, dim))
        r, s = sample_rs(rng, rs, m)
        z_s = interpolate(x0, z1, s)
        if post is None:
            d_c, _, c_c = mf_target_and_residual(net, z_s, r, s, x0, z1, return_cache=True)
            v = analytic.gauss_velocity(sigma0, s, z_s)
            d_m, _, c_m = mf_marginal_residual(net, z_s, r, s, v, return_cache=True)
        else:
            t = rng.uniform(size=m)
            x_t = perturb(sched, x0, t, rng.standard_normal((m, dim)))
            d_c, _, c_c = dcmf_target_and_residual(net, z_s, r, s, x_t, t, x0, z1, return_cache=True)
            v = post.velocity(s, z_s, x_t, t)
            d_m, _, c_m = dmf_marginal_residual(net, z_s, r, s, x_t, t, v, return_cache=True)
        g_cond += m * raw_loss_grad(net, d_c, c_c)
        g_marg += m * raw_loss_grad(net, d_m, c_m)
        done += m
    return g_cond / n, g_marg / n
