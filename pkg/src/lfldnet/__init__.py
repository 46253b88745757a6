"""Latent dynamics surrogates for parameterized PDEs.

Liquid (CfC over NCP wiring) or neural-ODE dynamics produce a small latent
state trajectory from time-dependent input signals; a pointwise GELU
decoder, optionally fed a trainable Fourier embedding of the coordinates,
maps (state, point) pairs to field values.  Everything runs on a small
numpy reverse-mode autodiff engine.
"""

from . import autodiff, datagen, dynamics, reconstruction, wiring
from .autodiff import Tape, Tensor, backward, parameter, precision
from .config import PRESETS, TrainConfig, preset_config
from .datagen import TrajectoryDataset, generate, read_dataset, write_dataset
from .errors import (ConfigError, ContractError, FormatError, IncompatibleError, IntegrityError, LFLDError,
                     ModelStateError, ShapeError, TapeStateError, TrainingDivergence, VersionError)
from .model import (LatentModel, NormalizationStats, count_parameters, denormalize, load_checkpoint,
                    model_forward, normalize, save_checkpoint)
from .rng import PortableRNG
from .training import adam_step, evaluate, mse_loss, random_search, train
from .wiring import build_wiring

__version__ = "0.1.0"

__all__ = [
    "autodiff", "datagen", "dynamics", "reconstruction", "wiring",
    "Tape", "Tensor", "backward", "parameter", "precision",
    "PRESETS", "TrainConfig", "preset_config",
    "TrajectoryDataset", "generate", "read_dataset", "write_dataset",
    "ConfigError", "ContractError", "FormatError", "IncompatibleError", "IntegrityError", "LFLDError",
    "ModelStateError", "ShapeError", "TapeStateError", "TrainingDivergence", "VersionError",
    "LatentModel", "NormalizationStats", "count_parameters", "denormalize", "load_checkpoint",
    "model_forward", "normalize", "save_checkpoint",
    "PortableRNG", "adam_step", "evaluate", "mse_loss", "random_search", "train", "build_wiring",
]
