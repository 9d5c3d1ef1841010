"""Small SiLU MLP with sinusoidal scalar embeddings.

The network computes ``u(z, r, s, x, t)`` on batches. Three primitives are
provided, all in float64: :func:`forward`, forward-mode :func:`jvp`, and
reverse-mode :func:`backward` (parameter gradients, optionally input
gradients). Parameters live in one flat vector so that optimizer state,
EMA shadows and checkpoints are plain arrays.

Input layout per row: ``[z, x, emb(s - r), emb(s), emb(t)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_EMBED_DIM = 32
DEFAULT_MAX_FREQ = 4.0


class NetworkConfigError(ValueError):
    pass


@dataclass
class MlpNet:
    widths: tuple[int, ...]
    embed_dim: int = DEFAULT_EMBED_DIM
    max_freq: float = DEFAULT_MAX_FREQ
    params: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        _validate(self.widths, self.embed_dim)
        n = n_params(self.widths)
        if self.params is None:
            self.params = np.zeros(n)
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (n,):
            raise NetworkConfigError(f"expected {n} parameters, got {self.params.shape}")

    @property
    def data_dim(self) -> int:
        return self.widths[-1]

    @property
    def freqs(self) -> np.ndarray:
        return np.geomspace(1.0, self.max_freq, self.embed_dim // 2)

    def layers(self, flat=None):
        """(W, b) views into ``flat`` (defaults to the parameters)."""
        flat = self.params if flat is None else flat
        out, off = [], 0
        for n_in, n_out in zip(self.widths[:-1], self.widths[1:]):
            W = flat[off:off + n_in * n_out].reshape(n_in, n_out)
            off += n_in * n_out
            b = flat[off:off + n_out]
            off += n_out
            out.append((W, b))
        return out

    def copy(self, params=None) -> "MlpNet":
        p = self.params if params is None else params
        return MlpNet(self.widths, self.embed_dim, self.max_freq, np.array(p, copy=True))

    def __call__(self, z, r, s, x, t):
        return forward(self, z, r, s, x, t)

    def jvp(self, z, r, s, x, t, dz, dr=0.0, ds=0.0, dx=None, dt=0.0):
        return jvp(self, z, r, s, x, t, dz, dr, ds, dx, dt)

    def header(self) -> dict:
        return {"widths": list(self.widths), "embed_dim": self.embed_dim,
                "max_freq": self.max_freq}


def _validate(widths, embed_dim):
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise NetworkConfigError(f"layer widths must be positive, got {widths}")
    if embed_dim <= 0 or embed_dim % 2:
        raise NetworkConfigError(f"embed_dim must be a positive even integer, got {embed_dim}")
    d = widths[-1]
    if widths[0] != 2 * d + 3 * embed_dim:
        raise NetworkConfigError(
            f"input width {widths[0]} != 2*{d} + 3*{embed_dim} (z, x and three embeddings)"
        )


def n_params(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def make_widths(data_dim: int, hidden=(128, 128, 128), embed_dim=DEFAULT_EMBED_DIM):
    widths = (2 * data_dim + 3 * embed_dim, *hidden, data_dim)
    _validate(widths, embed_dim)
    return widths


def init_net(seed: int, widths, embed_dim: int = DEFAULT_EMBED_DIM,
             max_freq: float = DEFAULT_MAX_FREQ) -> MlpNet:
    """Fan-in scaled uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    net = MlpNet(tuple(widths), embed_dim, max_freq)
    rng = np.random.default_rng(seed)
    for W, b in net.layers():
        bound = 1.0 / np.sqrt(W.shape[0])
        W[...] = rng.uniform(-bound, bound, size=W.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return net


def _silu(a):
    sig = 1.0 / (1.0 + np.exp(-a))
    return a * sig, sig


def _scalar_batch(v, n):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise ValueError(f"scalar conditioning must have shape ({n},), got {v.shape}")
    return v


def _prepare(net, z, r, s, x, t):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != net.data_dim:
        raise ValueError(f"z must have shape (n, {net.data_dim}), got {z.shape}")
    n = z.shape[0]
    x = np.zeros_like(z) if x is None else np.asarray(x, dtype=np.float64)
    if x.shape != z.shape:
        raise ValueError(f"x_cond shape {x.shape} != z shape {z.shape}")
    return z, _scalar_batch(r, n), _scalar_batch(s, n), x, _scalar_batch(t, n)


def _embed(freqs, tau):
    ang = tau[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1), ang


def _embed_tangent(freqs, ang, dtau):
    w = freqs[None, :] * dtau[:, None]
    return np.concatenate([np.cos(ang) * w, -np.sin(ang) * w], axis=1)


def _features(net, z, r, s, x, t):
    f = net.freqs
    e_gap, a_gap = _embed(f, s - r)
    e_s, a_s = _embed(f, s)
    e_t, a_t = _embed(f, t)
    h0 = np.concatenate([z, x, e_gap, e_s, e_t], axis=1)
    return h0, (a_gap, a_s, a_t)


def _run(net, h0):
    """Forward pass keeping pre-activations for JVP / backward."""
    layers = net.layers()
    hs, pre, sigs = [h0], [], []
    h = h0
    for i, (W, b) in enumerate(layers):
        a = h @ W + b
        if i < len(layers) - 1:
            h, sig = _silu(a)
            pre.append(a)
            sigs.append(sig)
            hs.append(h)
        else:
            h = a
    return h, (hs, pre, sigs)


def forward(net: MlpNet, z, r, s, x, t) -> np.ndarray:
    z, r, s, x, t = _prepare(net, z, r, s, x, t)
    h0, _ = _features(net, z, r, s, x, t)
    h = h0
    layers = net.layers()
    for W, b in layers[:-1]:
        h = _silu(h @ W + b)[0]
    W, b = layers[-1]
    return h @ W + b


def forward_cached(net: MlpNet, z, r, s, x, t):
    z, r, s, x, t = _prepare(net, z, r, s, x, t)
    h0, angles = _features(net, z, r, s, x, t)
    u, cache = _run(net, h0)
    return u, (cache, angles)


def _jvp_from_cache(net, cache, angles, dz, dr, ds, dx, dt):
    hs, pre, sigs = cache
    n = hs[0].shape[0]
    f = net.freqs
    a_gap, a_s, a_t = angles
    dz = np.asarray(dz, dtype=np.float64)
    dx = np.zeros_like(dz) if dx is None else np.asarray(dx, dtype=np.float64)
    if dz.shape != hs[0][:, :net.data_dim].shape or dx.shape != dz.shape:
        raise ValueError(f"tangent shapes {dz.shape}, {dx.shape} do not match inputs")
    dr, ds, dt = (_scalar_batch(v, n) for v in (dr, ds, dt))
    dh = np.concatenate([
        dz, dx,
        _embed_tangent(f, a_gap, ds - dr),
        _embed_tangent(f, a_s, ds),
        _embed_tangent(f, a_t, dt),
    ], axis=1)
    layers = net.layers()
    for i, (W, _) in enumerate(layers):
        da = dh @ W
        if i < len(layers) - 1:
            a, sig = pre[i], sigs[i]
            # d/da [a sigmoid(a)] = sig (1 + a (1 - sig))
            dh = da * (sig * (1.0 + a * (1.0 - sig)))
        else:
            dh = da
    return dh


def jvp(net: MlpNet, z, r, s, x, t, dz, dr=0.0, ds=0.0, dx=None, dt=0.0):
    """Return ``(u, du)`` with ``du`` the directional derivative along the tangents."""
    u, (cache, angles) = forward_cached(net, z, r, s, x, t)
    return u, _jvp_from_cache(net, cache, angles, dz, dr, ds, dx, dt)


def jvp_cached(net: MlpNet, z, r, s, x, t, dz, dr=0.0, ds=0.0, dx=None, dt=0.0):
    """Like :func:`jvp` but also returns the cache for :func:`backward_cached`."""
    u, (cache, angles) = forward_cached(net, z, r, s, x, t)
    du = _jvp_from_cache(net, cache, angles, dz, dr, ds, dx, dt)
    return u, du, (cache, angles)


def backward_cached(net: MlpNet, cache, upstream, input_grad=False):
    (hs, pre, sigs), angles = cache
    g = np.asarray(upstream, dtype=np.float64)
    layers = net.layers()
    if g.shape != (hs[0].shape[0], net.data_dim):
        raise ValueError(f"upstream shape {g.shape} does not match output")
    grad = np.zeros_like(net.params)
    glayers = net.layers(grad)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = glayers[i]
        np.matmul(hs[i].T, g, out=gW)
        gb[...] = g.sum(axis=0)
        if i == 0 and not input_grad:
            break
        g = g @ W.T
        if i > 0:
            a, sig = pre[i - 1], sigs[i - 1]
            g = g * (sig * (1.0 + a * (1.0 - sig)))
    if not input_grad:
        return grad
    return grad, _input_grads(net, g, angles)


def _input_grads(net, g0, angles):
    d = net.data_dim
    k = net.embed_dim
    f = net.freqs
    half = k // 2

    def scalar_grad(block, ang):
        return (block[:, :half] * np.cos(ang) * f - block[:, half:] * np.sin(ang) * f).sum(axis=1)

    a_gap, a_s, a_t = angles
    base = 2 * d
    g_gap = scalar_grad(g0[:, base:base + k], a_gap)
    g_s = scalar_grad(g0[:, base + k:base + 2 * k], a_s)
    g_t = scalar_grad(g0[:, base + 2 * k:base + 3 * k], a_t)
    return {"z": g0[:, :d], "x": g0[:, d:2 * d], "r": -g_gap, "s": g_gap + g_s, "t": g_t}


def backward(net: MlpNet, z, r, s, x, t, upstream, input_grad=False):
    """Gradient of ``sum(upstream * forward(...))`` w.r.t. the flat parameters.

    With ``input_grad=True`` also returns a dict of input gradients
    (keys ``z, x, r, s, t``).
    """
    _, cache = forward_cached(net, z, r, s, x, t)
    return backward_cached(net, cache, upstream, input_grad=input_grad)
