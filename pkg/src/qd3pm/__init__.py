"""Exact simulation of quantum discrete denoising diffusion over bitstrings."""

from .datasets import bas_distribution, dfc_distribution, mixed_gaussian_distribution
from .denoiser import DenoiserCircuit, DenoiserParams, denoise_dist, make_topology
from .diffusion import forward_dist, sample_xt
from .metrics import kl_divergence, mutual_information_total, tv_distance
from .posterior import PosteriorSpec, posterior_dist
from .schedule import NoiseSchedule, cosine_schedule
from .sim import BitString
from .training import TrainConfig, preset_config, train

__version__ = "0.1.0"

__all__ = [
    "BitString", "DenoiserCircuit", "DenoiserParams", "NoiseSchedule", "PosteriorSpec", "TrainConfig",
    "bas_distribution", "cosine_schedule", "denoise_dist", "dfc_distribution", "forward_dist",
    "kl_divergence", "make_topology", "mixed_gaussian_distribution", "mutual_information_total",
    "posterior_dist", "preset_config", "sample_xt", "train", "tv_distance",
]
