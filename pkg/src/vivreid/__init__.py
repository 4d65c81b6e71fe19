"""Adversarial self-attack/defense with spatial-temporal relation mining for
visible-infrared video re-identification, at desk scale on synthetic data."""

from .data import Modality, SyntheticVideoDataset, generate_identity_bank, render_sequence, sample_batch
from .model import ModelConfig, ReIDNet
from .training import TrainConfig, Trainer, run_training, total_loss

__all__ = [
    "Modality",
    "ModelConfig",
    "ReIDNet",
    "SyntheticVideoDataset",
    "TrainConfig",
    "Trainer",
    "generate_identity_bank",
    "render_sequence",
    "run_training",
    "sample_batch",
    "total_loss",
]
