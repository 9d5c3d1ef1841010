"""YAML run configuration with up-front schema validation."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import data
from .network import DEFAULT_EMBED_DIM, DEFAULT_MAX_FREQ, init_net, make_widths
from .objectives import RsSamplerCfg
from .sample import SamplerSpec
from .schedule import NoiseSchedule
from .train import OBJECTIVES, TrainConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RingCfg(_Strict):
    n_components: int = Field(8, ge=1)
    radius: float = Field(2.0, gt=0)
    std: float = Field(0.2, ge=0)


class DatasetCfg(_Strict):
    kind: Literal["gaussian", "gmm", "ring", "two_moons", "checkerboard", "csv"] = "gaussian"
    dim: int = Field(2, ge=1)
    sigma0: float = Field(1.0, gt=0)
    means: list[list[float]] | None = None
    stds: list[float] | float | None = None
    weights: list[float] | None = None
    noise: float = Field(0.05, ge=0)
    path: str | None = None
    ring: RingCfg = RingCfg()

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "gmm" and (self.means is None or self.stds is None):
            raise ValueError("gmm dataset needs means and stds")
        if self.kind == "csv" and not self.path:
            raise ValueError("csv dataset needs a path")
        return self

    def to_spec(self) -> data.DatasetSpec:
        if self.kind == "ring":
            return data.ring_gmm(self.ring.n_components, self.ring.radius, self.ring.std)
        if self.kind == "gmm":
            return data.gmm(self.means, self.stds, self.weights)
        if self.kind == "csv":
            return data.from_csv(self.path)
        return data.DatasetSpec(self.kind, dim=self.dim, sigma0=self.sigma0, noise=self.noise)


class ScheduleCfg(_Strict):
    beta_min: float = Field(0.1, ge=0)
    beta_max: float = Field(20.0, ge=0)

    def build(self) -> NoiseSchedule:
        return NoiseSchedule(self.beta_min, self.beta_max)


class NetworkCfg(_Strict):
    hidden: list[int] = [128, 128, 128]
    embed_dim: int = Field(DEFAULT_EMBED_DIM, ge=2, multiple_of=2)
    max_freq: float = Field(DEFAULT_MAX_FREQ, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden widths must be positive")
        return self

    def build(self, dim: int):
        return init_net(self.seed, make_widths(dim, tuple(self.hidden), self.embed_dim),
                        self.embed_dim, self.max_freq)


class RsCfg(_Strict):
    mu: float = -0.4
    sigma: float = Field(1.0, gt=0)
    p_equal: float = Field(0.25, ge=0, le=1)


class TrainCfg(_Strict):
    objective: Literal[OBJECTIVES] = "stmd"
    learning_rate: float = Field(5e-4, gt=0)
    iterations: int = Field(1000, ge=1)
    batch_size: int = Field(64, ge=1)
    ema_decay: float = Field(0.9995, ge=0, lt=1)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grad_clip: float | None = None
    adaptive_c: float = Field(0.01, gt=0)
    adaptive_p: float = 1.0
    per_sample_weight: bool = False
    rs: RsCfg = RsCfg()
    log_every: int = Field(100, ge=1)
    checkpoint_every: int = Field(0, ge=0)

    def build(self) -> TrainConfig:
        fields = self.model_dump(exclude={"log_every", "checkpoint_every", "rs"})
        return TrainConfig(rs=RsSamplerCfg(**self.rs.model_dump()), **fields)


class SamplerCfg(_Strict):
    n_inf: int = Field(4, ge=1)
    n_mf: int = Field(2, ge=1)
    seed: int = 0
    n: int = Field(2048, ge=1)

    def build(self) -> SamplerSpec:
        return SamplerSpec(self.n_inf, self.n_mf, self.seed)


class EvalCfg(_Strict):
    metrics: list[Literal["w2", "energy"]] = ["w2", "energy"]
    n: int = Field(2048, ge=2, le=4096)
    n_rep: int = Field(4, ge=1)
    seed: int = 0
    sweep: list[tuple[int, int]] = [(1, 1), (1, 2), (2, 2), (4, 2)]


class RunConfig(_Strict):
    dataset: DatasetCfg = DatasetCfg()
    schedule: ScheduleCfg = ScheduleCfg()
    network: NetworkCfg = NetworkCfg()
    train: TrainCfg = TrainCfg()
    sampler: SamplerCfg = SamplerCfg()
    eval: EvalCfg = EvalCfg()
    output_dir: str = "runs/default"


def _set_dotted(tree: dict, key: str, value):
    *parents, leaf = key.split(".")
    node = tree
    for p in parents:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {key!r}: {p!r} is not a section")
    node[leaf] = value


def parse_override(text: str):
    """``a.b=value`` with the value parsed as YAML (so ``3``, ``true``, ``[1, 2]`` work)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(path=None, overrides=()) -> RunConfig:
    tree = {}
    if path is not None:
        try:
            tree = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(tree, dict):
            raise ConfigError(f"config {path} must be a mapping at the top level")
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        log.info("override %s = %r", key, value)
        _set_dotted(tree, key, value)
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigError(f"invalid config:\n{exc}") from exc


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)
