"""Few-step diffusion sampling by distilling reverse transition kernels into a Mean Flow."""

from .data import DatasetSpec
from .estimators import DDPMSampler, FlowMatchingSampler, MeanFlowSampler, STMDSampler
from .network import MlpNet, init_net, make_widths
from .sample import LinearObservation, SamplerSpec, stmd_inpaint, stmd_sample
from .schedule import NoiseSchedule
from .train import TrainConfig, load_checkpoint, save_checkpoint

__all__ = [
    "DDPMSampler",
    "DatasetSpec",
    "FlowMatchingSampler",
    "LinearObservation",
    "MeanFlowSampler",
    "MlpNet",
    "NoiseSchedule",
    "STMDSampler",
    "SamplerSpec",
    "TrainConfig",
    "init_net",
    "load_checkpoint",
    "make_widths",
    "save_checkpoint",
    "stmd_inpaint",
    "stmd_sample",
]
__version__ = "0.1.0"
