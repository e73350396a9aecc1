"""Minimal reverse-mode autodiff over numpy arrays."""

from . import ops
from .gradcheck import GradCheckReport, gradient_check, relative_error
from .ops import SUPPORTED_OPS, dropout, forward_op
from .optim import Optimizer, OptimizerState, sgd_step
from .tensor import NonFiniteError, ShapeError, Tensor, UnsupportedOpError, backward, no_grad


def dropout_apply(x: Tensor, rate: float, mode: str, rng_seed) -> Tensor:
    """``mode`` is ``"train"`` or ``"infer"``; inference is the identity."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return dropout(x, rate, mode == "train", rng_seed)


__all__ = [
    "GradCheckReport",
    "NonFiniteError",
    "Optimizer",
    "OptimizerState",
    "SUPPORTED_OPS",
    "ShapeError",
    "Tensor",
    "UnsupportedOpError",
    "backward",
    "dropout_apply",
    "forward_op",
    "gradient_check",
    "no_grad",
    "ops",
    "relative_error",
    "sgd_step",
]
