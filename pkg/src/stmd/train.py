"""Training loops (STMD and baselines), Adam, EMA and checkpoints."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import network
from .network import MlpNet
from .objectives import (
    LossBreakdown,
    RsSamplerCfg,
    cfm_residual,
    dcmf_target_and_residual,
    interpolate,
    mf_target_and_residual,
    sample_rs,
    weighted_loss,
)
from .schedule import NoiseSchedule, perturb

OBJECTIVES = ("stmd", "meanflow", "cfm", "ddpm")
MAGIC = b"STMD-CHECKPOINT\n"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class NumericalError(RuntimeError):
    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "stmd"
    learning_rate: float = 5e-4
    iterations: int = 1000
    batch_size: int = 64
    ema_decay: float = 0.9995
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grad_clip: float | None = None
    adaptive_c: float = 0.01
    adaptive_p: float = 1.0
    per_sample_weight: bool = False
    rs: RsSamplerCfg = field(default_factory=RsSamplerCfg)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.learning_rate <= 0 or self.iterations <= 0 or self.batch_size <= 0:
            raise ValueError("learning_rate, iterations and batch_size must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")
        if isinstance(self.rs, dict):
            object.__setattr__(self, "rs", RsSamplerCfg(**self.rs))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    net: MlpNet
    adam_m: np.ndarray
    adam_v: np.ndarray
    ema: np.ndarray
    step: int
    rng: np.random.Generator
    config: TrainConfig
    sched: NoiseSchedule
    meta: dict = field(default_factory=dict)

    def ema_net(self) -> MlpNet:
        return self.net.copy(self.ema)


def init_state(net: MlpNet, config: TrainConfig, sched: NoiseSchedule | None = None,
               meta: dict | None = None) -> TrainState:
    sched = sched or NoiseSchedule()
    return TrainState(
        net=net.copy(),
        adam_m=np.zeros_like(net.params),
        adam_v=np.zeros_like(net.params),
        ema=net.params.copy(),
        step=0,
        rng=np.random.default_rng(config.seed),
        config=config,
        sched=sched,
        meta=dict(meta or {}),
    )


# --- optimizer --------------------------------------------------------------

def adam_update(params, grad, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step in place; ``step`` is the 1-based count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)


def ema_update(ema, params, decay):
    ema *= decay
    ema += (1.0 - decay) * params


def _apply(state: TrainState, grad: np.ndarray, info: LossBreakdown):
    cfg = state.config
    gnorm = float(np.sqrt(grad @ grad))
    if not (np.isfinite(info.weighted_loss) and np.isfinite(gnorm)):
        raise NumericalError(
            f"non-finite loss/gradient at step {state.step}",
            {"step": state.step, "raw_loss": info.raw_loss,
             "weighted_loss": info.weighted_loss, "grad_norm": gnorm,
             "param_absmax": float(np.abs(state.net.params).max())},
        )
    if cfg.grad_clip is not None and gnorm > cfg.grad_clip:
        grad = grad * (cfg.grad_clip / gnorm)
    state.step += 1
    adam_update(state.net.params, grad, state.adam_m, state.adam_v, state.step,
                cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    ema_update(state.ema, state.net.params, cfg.ema_decay)
    return gnorm


# --- per-objective steps -------------------------------------------------------

def _draws(state: TrainState, x0):
    """Randomness for one step, drawn in a fixed order from the state RNG."""
    rng, cfg = state.rng, state.config
    n = x0.shape[0]
    if cfg.objective == "stmd":
        t = rng.uniform(size=n)
        eps = rng.standard_normal(x0.shape)
        z1 = rng.standard_normal(x0.shape)
        r, s = sample_rs(rng, cfg.rs, n)
        return {"t": t, "eps": eps, "z1": z1, "r": r, "s": s}
    if cfg.objective == "meanflow":
        z1 = rng.standard_normal(x0.shape)
        r, s = sample_rs(rng, cfg.rs, n)
        return {"z1": z1, "r": r, "s": s}
    if cfg.objective == "cfm":
        z1 = rng.standard_normal(x0.shape)
        s = rng.uniform(size=n)
        return {"z1": z1, "s": s}
    t = rng.uniform(size=n)
    eps = rng.standard_normal(x0.shape)
    return {"t": t, "eps": eps}


def residual(net: MlpNet, sched: NoiseSchedule, objective: str, x0, draws):
    """Residual and network cache for a frozen batch of randomness."""
    if objective == "stmd":
        x_t = perturb(sched, x0, draws["t"], draws["eps"])
        z_s = interpolate(x0, draws["z1"], draws["s"])
        delta, _, cache = dcmf_target_and_residual(
            net, z_s, draws["r"], draws["s"], x_t, draws["t"], x0, draws["z1"], return_cache=True)
        return delta, cache
    if objective == "meanflow":
        z_s = interpolate(x0, draws["z1"], draws["s"])
        delta, _, cache = mf_target_and_residual(
            net, z_s, draws["r"], draws["s"], x0, draws["z1"], return_cache=True)
        return delta, cache
    if objective == "cfm":
        s = draws["s"]
        z_s = interpolate(x0, draws["z1"], s)
        v, cache = network.forward_cached(net, z_s, s, s, None, 0.0)
        return cfm_residual(v, x0, draws["z1"]), cache
    if objective == "ddpm":
        x_t = perturb(sched, x0, draws["t"], draws["eps"])
        eps_hat, cache = network.forward_cached(net, x_t, 0.0, 0.0, None, draws["t"])
        return eps_hat - draws["eps"], cache
    raise ValueError(f"unknown objective {objective!r}")


def train_step(state: TrainState, x0) -> tuple[TrainState, LossBreakdown, float]:
    """Draw randomness, evaluate the objective, one Adam + EMA update."""
    cfg = state.config
    x0 = np.asarray(x0, dtype=np.float64)
    draws = _draws(state, x0)
    delta, cache = residual(state.net, state.sched, cfg.objective, x0, draws)
    if cfg.objective in ("stmd", "meanflow"):
        info, up = weighted_loss(delta, cfg.adaptive_c, cfg.adaptive_p, cfg.per_sample_weight)
    else:
        # plain regression objectives are not reweighted
        info, up = weighted_loss(delta, 1.0, 0.0)
    grad = network.backward_cached(state.net, cache, up)
    gnorm = _apply(state, grad, info)
    return state, info, gnorm


def _checked(objective):
    def step(state, x0):
        if state.config.objective != objective:
            raise ValueError(f"state is configured for {state.config.objective!r}, not {objective!r}")
        return train_step(state, x0)[:2]
    step.__name__ = f"train_step_{objective}"
    return step


train_step_stmd = _checked("stmd")
train_step_meanflow = _checked("meanflow")
train_step_cfm = _checked("cfm")
train_step_ddpm = _checked("ddpm")


# --- loop --------------------------------------------------------------------

METRIC_COLUMNS = ("step", "raw_loss", "weighted_loss", "grad_norm", "wallclock")


def fit(state: TrainState, draw: Callable[[np.random.Generator, int], np.ndarray],
        iterations: int | None = None, log_every: int = 100, metrics_path=None,
        checkpoint_every: int = 0, checkpoint_dir=None, progress=None) -> list[dict]:
    """Run training until ``state.step == iterations``.

    ``draw(rng, n)`` supplies data batches from the state RNG. Returns the
    logged metric rows (window means over ``log_every`` steps).
    """
    iterations = state.config.iterations if iterations is None else iterations
    rows, window = [], []
    start = time.perf_counter()
    fh = writer = None
    if metrics_path is not None:
        new = state.step == 0 or not Path(metrics_path).exists()
        fh = open(metrics_path, "w" if new else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(METRIC_COLUMNS)
    try:
        while state.step < iterations:
            x0 = draw(state.rng, state.config.batch_size)
            _, info, gnorm = train_step(state, x0)
            window.append((info.raw_loss, info.weighted_loss, gnorm))
            if log_every and state.step % log_every == 0:
                w = np.mean(window, axis=0)
                row = dict(zip(METRIC_COLUMNS, (state.step, *map(float, w),
                                                 time.perf_counter() - start)))
                rows.append(row)
                window = []
                if writer is not None:
                    writer.writerow([row["step"]] + [repr(row[c]) for c in METRIC_COLUMNS[1:]])
                    fh.flush()
                if progress is not None:
                    progress(row)
            if checkpoint_every and checkpoint_dir is not None and state.step % checkpoint_every == 0:
                save_checkpoint(state, Path(checkpoint_dir) / f"step_{state.step:08d}.ckpt")
    finally:
        if fh is not None:
            fh.close()
    return rows


# --- checkpoints ---------------------------------------------------------------

_BLOBS = ("params", "ema", "adam_m", "adam_v")


def _blob(state, name):
    return state.net.params if name == "params" else getattr(state, name)


def save_checkpoint(state: TrainState, path) -> None:
    n = state.net.params.size
    blobs = [{"name": b, "offset": i * n * 8, "count": n} for i, b in enumerate(_BLOBS)]
    header = {
        "format": "stmd-checkpoint",
        "version": FORMAT_VERSION,
        "step": state.step,
        "schedule": state.sched.to_dict(),
        "network": state.net.header(),
        "config": state.config.to_dict(),
        "rng": state.rng.bit_generator.state,
        "meta": state.meta,
        "blobs": blobs,
        "payload_bytes": len(_BLOBS) * n * 8,
        "dtype": "<f8",
    }
    head = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.asarray(_blob(state, b), dtype="<f8").tobytes() for b in _BLOBS)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(b"%d\n" % len(head))
        fh.write(head)
        fh.write(payload)
    tmp.replace(path)


def read_header(path) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not raw.startswith(MAGIC):
        raise CheckpointFormatError(f"{path}: bad magic")
    rest = raw[len(MAGIC):]
    nl = rest.find(b"\n")
    try:
        hlen = int(rest[:nl])
        header = json.loads(rest[nl + 1:nl + 1 + hlen])
    except (ValueError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header ({exc})") from exc
    payload = rest[nl + 1 + hlen:]
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {header.get('version')}")
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointFormatError(
            f"{path}: payload has {len(payload)} bytes, header declares {header.get('payload_bytes')}")
    return header, payload


def load_checkpoint(path) -> TrainState:
    header, payload = read_header(path)
    try:
        net_h = header["network"]
        net = MlpNet(tuple(net_h["widths"]), net_h["embed_dim"], net_h["max_freq"])
        arrays = {}
        for b in header["blobs"]:
            lo, cnt = int(b["offset"]), int(b["count"])
            if cnt != net.params.size or lo + 8 * cnt > len(payload):
                raise CheckpointFormatError(f"{path}: blob {b['name']} out of range")
            arrays[b["name"]] = np.frombuffer(payload, dtype="<f8", count=cnt, offset=lo).astype(np.float64)
        missing = set(_BLOBS) - set(arrays)
        if missing:
            raise CheckpointFormatError(f"{path}: missing blobs {sorted(missing)}")
        net.params = arrays["params"]
        config = TrainConfig.from_dict(header["config"])
        sched = NoiseSchedule(**header["schedule"])
        rng = np.random.default_rng()
        rng.bit_generator.state = header["rng"]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"{path}: malformed header ({exc})") from exc
    return TrainState(net=net, adam_m=arrays["adam_m"], adam_v=arrays["adam_v"],
                      ema=arrays["ema"], step=int(header["step"]), rng=rng,
                      config=config, sched=sched, meta=header.get("meta", {}))


def with_config(state: TrainState, **changes) -> TrainState:
    state.config = replace(state.config, **changes)
    return state
