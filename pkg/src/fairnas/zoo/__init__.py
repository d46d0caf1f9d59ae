"""MLP, ResNet and FT-Transformer with hand-written backpropagation."""

from .models import (
    ModelState,
    build,
    cross_entropy,
    forward,
    gradients,
    mlp_widths,
    parameter_count,
    predict,
)
from .training import DivergedError, TrainSettings, adamw_step, dataset_loss, train_epochs

__all__ = [
    "DivergedError",
    "ModelState",
    "TrainSettings",
    "adamw_step",
    "build",
    "cross_entropy",
    "dataset_loss",
    "forward",
    "gradients",
    "mlp_widths",
    "parameter_count",
    "predict",
    "train_epochs",
]
