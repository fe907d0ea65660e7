"""Dual-stream time series classifier: deformable convolution features feeding
compressed collaborative linear attention, trained with mask-based self
distillation and online cross-stream distillation. Pure numpy."""

from .errors import (BadMagicError, CheckpointError, ChecksumError, ConfigError, DataError, DimensionError,
                     FmlaError, NumericError, TruncatedCheckpointError, ValidationError, VersionMismatchError)
from .masks import MaskSpec
from .model import FMLAModel, ModelConfig
from .tensor import Tensor
from .train import TrainConfig, train_epochs

__all__ = [
    "BadMagicError", "CheckpointError", "ChecksumError", "ConfigError", "DataError", "DimensionError",
    "FmlaError", "NumericError", "TruncatedCheckpointError", "ValidationError", "VersionMismatchError",
    "FMLAModel", "MaskSpec", "ModelConfig", "Tensor", "TrainConfig", "train_epochs",
]
__version__ = "0.1.0"
