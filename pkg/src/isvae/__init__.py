"""Spectral filter-bank variational autoencoder for time-series clustering."""

from isvae.datagen import Dataset, SplitSpec, SyntheticSpec, generate_synthetic, read_csv, to_spectrum, write_csv
from isvae.kernels import BACKEND
from isvae.model import ISVAE, Checkpoint, ModelConfig, VanillaVAE, build_model
from isvae.spectral import ValidationError, dct2, dct2_batch
from isvae.training import TrainConfig, extract_features, train

__all__ = [
    "BACKEND",
    "Checkpoint",
    "Dataset",
    "ISVAE",
    "ModelConfig",
    "SplitSpec",
    "SyntheticSpec",
    "TrainConfig",
    "ValidationError",
    "VanillaVAE",
    "build_model",
    "dct2",
    "dct2_batch",
    "extract_features",
    "generate_synthetic",
    "read_csv",
    "to_spectrum",
    "train",
    "write_csv",
]
