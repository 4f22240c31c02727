"""Evidence-aware credibility assessment for natural-language claims."""

from .errors import (
    ContractError,
    DegenerateInputError,
    EvicredError,
    ParseError,
    ShapeError,
    UsageError,
)
from .model import CredibilityModel, Hyperparams, ModelParams, aggregate, verdict
from .training import TrainConfig, evaluate, fit, gradient_check, train

__version__ = "0.1.0"

__all__ = [
    "CredibilityModel",
    "Hyperparams",
    "ModelParams",
    "TrainConfig",
    "aggregate",
    "verdict",
    "fit",
    "train",
    "evaluate",
    "gradient_check",
    "EvicredError",
    "ShapeError",
    "ContractError",
    "DegenerateInputError",
    "ParseError",
    "UsageError",
    "__version__",
]
