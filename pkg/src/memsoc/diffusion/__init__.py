"""Conditional denoising diffusion for 1-D spectra."""

from .augment import augment, plan_generation
from .denoiser import DenoiserNet, DiffusionConfig, sinusoidal_embedding
from .sampler import loss_conditional, p_sample_step, sample, sample_batch, train_denoiser
from .schedule import NoiseSchedule, iterate_forward, linear_schedule, q_sample

__all__ = [
    "DenoiserNet",
    "DiffusionConfig",
    "NoiseSchedule",
    "augment",
    "iterate_forward",
    "linear_schedule",
    "loss_conditional",
    "p_sample_step",
    "plan_generation",
    "q_sample",
    "sample",
    "sample_batch",
    "sinusoidal_embedding",
    "train_denoiser",
]
