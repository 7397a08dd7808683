"""Small float64 tensor library with tape-based reverse-mode differentiation."""

from . import functional
from .functional import (
    EmptyMemoryError,
    dice_loss,
    focal_loss,
    layer_norm,
    linear,
    matmul,
    sigmoid,
    softmax,
    softmax_attention,
    straight_through,
)
from .gradcheck import check_grads, numeric_grad, rel_error
from .optim import AdamW, AdamWState, adamw_step
from .tensor import NumericError, ShapeError, Tape, TapeError, Tensor, as_tensor

__all__ = [
    "AdamW",
    "AdamWState",
    "EmptyMemoryError",
    "NumericError",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "check_grads",
    "dice_loss",
    "focal_loss",
    "functional",
    "layer_norm",
    "linear",
    "matmul",
    "numeric_grad",
    "rel_error",
    "sigmoid",
    "softmax",
    "softmax_attention",
    "straight_through",
]
