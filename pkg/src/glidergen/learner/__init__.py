"""Hierarchical variational autoencoder over SDF lattices (numpy, manual backprop)."""

from .normalize import default_d_max, denormalize, normalize_sdf
from .model import (
    DivergenceError,
    LatentVector,
    LearnerConfig,
    LearnerParams,
    decode,
    elbo_loss,
    encode,
    encode_dataset,
    gradients,
    init_params,
    loss_and_gradients,
    posterior,
    zero_params,
)
from .training import EpochRecord, TrainResult, kl_schedule, train

__all__ = [
    "DivergenceError", "EpochRecord", "LatentVector", "LearnerConfig", "LearnerParams", "TrainResult", "decode",
    "default_d_max", "denormalize", "elbo_loss", "encode", "encode_dataset", "gradients", "init_params",
    "kl_schedule", "loss_and_gradients", "normalize_sdf", "posterior", "train", "zero_params",
]
