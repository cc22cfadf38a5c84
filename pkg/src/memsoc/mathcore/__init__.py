"""Minimal dense-tensor math with reverse-mode autodiff.

Everything downstream (classifier, diffusion denoiser) trains through this
module; quantized and device-level integer arithmetic lives elsewhere.
"""

from .optim import Adam, Sgd, make_optimizer
from .rng import fixed_rng, subsystem_rng
from .tensor import (
    Tape,
    Tensor,
    add,
    attention,
    backward,
    cross_entropy,
    fake_quant,
    gaussian,
    layer_norm,
    matmul,
    multiply,
    relu,
    reshape,
    scale,
    softmax,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "Adam",
    "Sgd",
    "Tape",
    "Tensor",
    "add",
    "attention",
    "backward",
    "cross_entropy",
    "fake_quant",
    "fixed_rng",
    "gaussian",
    "layer_norm",
    "make_optimizer",
    "matmul",
    "multiply",
    "relu",
    "reshape",
    "scale",
    "softmax",
    "subsystem_rng",
    "tmean",
    "transpose",
    "tsum",
]
