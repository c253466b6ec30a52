"""Shrink VAE latent spaces during training with GECO and L0-ARM gates."""

from .config import TrainConfig
from .gating import GateVector, arm_gradient_term, hard_mask, open_gate_surrogate, sample_arm_masks
from .geco import (
    GecoState,
    MetricsRow,
    assemble_loss,
    constraint,
    effective_lambda,
    smoothed_constraint,
    train_step,
)
from .vae import VaeModel, decode, encode, kl_elementwise, reconstruction_error, reparameterize

__version__ = "0.1.0"
