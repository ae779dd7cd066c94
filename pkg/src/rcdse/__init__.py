"""Robust consistency distillation for diffusion-based speech enhancement, at desk scale."""
from .errors import (ArgumentError, CheckpointError, ConfigError, FormatError, MissingFileError,
                     NumericalError, RcdError, StaleCacheError, TrainingError)
from .kernels import BACKEND
from .numerics import Rng
from .sde import SdeParams

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "BACKEND", "CheckpointError", "ConfigError", "FormatError", "MissingFileError",
    "NumericalError", "RcdError", "Rng", "SdeParams", "StaleCacheError", "TrainingError",
]
