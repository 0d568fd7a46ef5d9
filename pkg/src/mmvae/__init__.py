"""Multimodal variational autoencoder for sensorimotor learning on a simulated arm."""

from .arm import ArmConfig, BabbleTrace, babble, babble_rows
from .dataset import AugmentedDataset, MaskPattern, assign_split, augment, build_dataset
from .model import MMVAE, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ArmConfig", "BabbleTrace", "babble", "babble_rows",
    "AugmentedDataset", "MaskPattern", "assign_split", "augment", "build_dataset",
    "MMVAE", "TrainConfig", "train",
]
