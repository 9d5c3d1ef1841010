"""scikit-learn style wrappers around training and sampling.

``fit`` accepts either an ``(n, d)`` array, which is resampled with
replacement every step, or a :class:`~stmd.data.DatasetSpec`, which is
sampled fresh every step.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import train
from .data import DatasetSpec
from .evaluation import w2_exact
from .network import DEFAULT_EMBED_DIM, DEFAULT_MAX_FREQ, init_net, make_widths
from .objectives import RsSamplerCfg
from .sample import LinearObservation, SamplerSpec, sample_objective, stmd_inpaint
from .schedule import NoiseSchedule


class _GenerativeEstimator(BaseEstimator):
    objective = None

    def __init__(self, hidden=(128, 128, 128), embed_dim=DEFAULT_EMBED_DIM,
                 max_freq=DEFAULT_MAX_FREQ, learning_rate=5e-4, iterations=1000,
                 batch_size=64, ema_decay=0.9995, beta_min=0.1, beta_max=20.0,
                 adaptive_c=0.01, adaptive_p=1.0, per_sample_weight=False,
                 random_state=0, log_every=100):
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.max_freq = max_freq
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.batch_size = batch_size
        self.ema_decay = ema_decay
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.adaptive_c = adaptive_c
        self.adaptive_p = adaptive_p
        self.per_sample_weight = per_sample_weight
        self.random_state = random_state
        self.log_every = log_every

    def _train_config(self):
        return train.TrainConfig(
            objective=self.objective, learning_rate=self.learning_rate,
            iterations=self.iterations, batch_size=self.batch_size, ema_decay=self.ema_decay,
            seed=self.random_state, adaptive_c=self.adaptive_c, adaptive_p=self.adaptive_p,
            per_sample_weight=self.per_sample_weight, rs=RsSamplerCfg())

    def fit(self, X, y=None, metrics_path=None):
        if isinstance(X, DatasetSpec):
            draw, dim = X.sample, X.dim
        else:
            X = check_array(X, dtype=np.float64)
            dim = X.shape[1]

            def draw(rng, n, _X=X):
                return _X[rng.integers(0, _X.shape[0], n)]

        widths = make_widths(dim, tuple(self.hidden), self.embed_dim)
        net = init_net(self.random_state, widths, self.embed_dim, self.max_freq)
        sched = NoiseSchedule(self.beta_min, self.beta_max)
        self.state_ = train.init_state(net, self._train_config(), sched)
        self.metrics_ = train.fit(self.state_, draw, log_every=self.log_every,
                                  metrics_path=metrics_path)
        self.n_features_in_ = dim
        return self

    @classmethod
    def from_checkpoint(cls, path):
        state = train.load_checkpoint(path)
        if state.config.objective != cls.objective:
            raise ValueError(f"checkpoint was trained with {state.config.objective!r}, "
                             f"not {cls.objective!r}")
        cfg, net = state.config, state.net
        est = cls(hidden=tuple(net.widths[1:-1]), embed_dim=net.embed_dim, max_freq=net.max_freq,
                  learning_rate=cfg.learning_rate, iterations=cfg.iterations,
                  batch_size=cfg.batch_size, ema_decay=cfg.ema_decay,
                  beta_min=state.sched.beta_min, beta_max=state.sched.beta_max,
                  adaptive_c=cfg.adaptive_c, adaptive_p=cfg.adaptive_p,
                  per_sample_weight=cfg.per_sample_weight, random_state=cfg.seed)
        est.state_ = state
        est.n_features_in_ = net.data_dim
        est.metrics_ = []
        return est

    def save(self, path):
        check_is_fitted(self, "state_")
        train.save_checkpoint(self.state_, path)

    @property
    def model_(self):
        """The EMA network used for sampling."""
        check_is_fitted(self, "state_")
        return self.state_.ema_net()

    def sample(self, n, n_inf=4, n_mf=2, seed=0):
        """Draw ``n`` points; baselines take ``n_inf * n_mf`` steps."""
        check_is_fitted(self, "state_")
        return sample_objective(self.objective, self.model_, self.state_.sched, n,
                                self.n_features_in_, n_inf, n_mf, seed)

    def score(self, X, y=None, n_inf=4, n_mf=2, seed=0):
        """Negative exact W2^2 between ``len(X)`` generated points and ``X``."""
        X = check_array(X, dtype=np.float64)
        return -w2_exact(self.sample(X.shape[0], n_inf, n_mf, seed), X).value


class STMDSampler(_GenerativeEstimator):
    """Conditional Mean Flow over reverse-diffusion transition kernels."""

    objective = "stmd"

    def inpaint(self, mask, y, n, n_inf=25, n_mf=2, seed=0):
        """Samples with ``mask @ x0 == y`` enforced by projection at every outer step."""
        check_is_fitted(self, "state_")
        obs = LinearObservation(np.atleast_2d(mask), np.atleast_1d(y))
        return stmd_inpaint(self.model_, self.state_.sched, SamplerSpec(n_inf, n_mf, seed), obs, n)


class MeanFlowSampler(_GenerativeEstimator):
    objective = "meanflow"


class FlowMatchingSampler(_GenerativeEstimator):
    objective = "cfm"


class DDPMSampler(_GenerativeEstimator):
    objective = "ddpm"
