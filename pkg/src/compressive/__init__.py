"""Compressive Transformer: long-range sequence models with a compressed memory.

A numpy autograd engine with compiled hot kernels (pure-numpy fallback),
relative multi-head attention over ``[compressed memory; memory; sequence]``,
learned or fixed memory compression, training, evaluation and a CLI.
"""

from .autograd import Tensor, backward, no_grad, precision
from .compression import CompressionSpec, Compressor
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DegenerateInputError,
    DimensionError,
    TrainingFault,
)
from .memory import MemoryState, attention_cost, init_state, temporal_range, update_memories
from .model import CompressiveTransformer, ModelConfig
from .training import TrainSchedule, Trainer

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "CompressionSpec", "CompressiveTransformer", "Compressor",
    "ConfigError", "ContractError", "DataError", "DegenerateInputError", "DimensionError",
    "MemoryState", "ModelConfig", "Tensor", "TrainSchedule", "Trainer", "TrainingFault",
    "attention_cost", "backward", "init_state", "no_grad", "precision", "temporal_range",
    "update_memories",
]
