"""Desk-scale generative-model training and memorization auditing.

Train small GAN / GLO / AEGAN models, invert them by latent recovery, and
test train-vs-validation recovery-error distributions for overfitting.
"""

from .autodiff import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    grad,
    grad_check,
)
from .optim import AdamState, MinimizeResult, OptimizerConfig, minimize
from .rng import Rng, derive_seed

__all__ = [
    "AdamState",
    "MinimizeResult",
    "NonFiniteError",
    "OptimizerConfig",
    "Rng",
    "ShapeError",
    "Tape",
    "Tensor",
    "backward",
    "derive_seed",
    "grad",
    "grad_check",
    "minimize",
]

__version__ = "0.1.0"
