"""Arrays, reverse-mode gradients, initializers, optimizers and containers."""

from geps.diffcore.optim import AdamState, PlateauScheduler, adam_step, plateau_schedule
from geps.diffcore.params import GradientMap, ParamStore, orthogonal_init
from geps.diffcore.tensor import (
    NonScalarLossError,
    Tensor,
    UnsupportedPrimitiveError,
    grad,
    value_and_grad,
)

__all__ = [
    "AdamState", "GradientMap", "NonScalarLossError", "ParamStore", "PlateauScheduler",
    "Tensor", "UnsupportedPrimitiveError", "adam_step", "grad", "orthogonal_init",
    "plateau_schedule", "value_and_grad",
]
