"""Multi-instance multi-label learning for aspect-category sentiment analysis, on a small numpy autodiff core."""

from .errors import ACMIMLLNError, ConfigError, ContractError, DataError, DimensionError, TrainingDivergence
from .model import ACMIMLLN, ModelConfig, POLARITIES, VARIANTS
from .training import TrainConfig, train

__all__ = [
    "ACMIMLLN", "ModelConfig", "TrainConfig", "train", "POLARITIES", "VARIANTS",
    "ACMIMLLNError", "ConfigError", "ContractError", "DataError", "DimensionError", "TrainingDivergence",
]
