"""Unpaired image translation with a shared autoencoder, one translator and deviation loss."""

from .config import TrainConfig
from .losses import LossWeights
from .networks import ArchSpec, count_flops, decode, discriminate, encode, init_params, translate
from .tensor import ParamTensor, Tape, Tensor, backward

__all__ = [
    "ArchSpec", "LossWeights", "ParamTensor", "Tape", "Tensor", "TrainConfig",
    "backward", "count_flops", "decode", "discriminate", "encode", "init_params", "translate",
]
__version__ = "0.1.0"
