"""Deep multi-view clustering: a small numpy autodiff engine, SSL losses,
fusion and clustering modules, six composable instances, evaluation
protocol and the view-count theory utilities."""

from .errors import (
    ConfigurationError,
    ContractViolation,
    DeepMVCError,
    DegenerateInputError,
    DimensionError,
    FormatError,
    GenerationError,
    TrainingError,
)
from .tensor import Tensor, grad_check, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ContractViolation", "DeepMVCError", "DegenerateInputError", "DimensionError",
    "FormatError", "GenerationError", "TrainingError", "Tensor", "grad_check", "no_grad",
]
