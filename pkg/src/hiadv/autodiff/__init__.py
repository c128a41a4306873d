from . import ops
from .checkpoint import load_arrays, restore_params, save_params
from .gradcheck import check_gradients, numeric_grad, relative_error
from .optim import Adam
from .tensor import (
    AutodiffError,
    DomainError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    active_tape,
    backward,
    is_grad_enabled,
    no_grad,
)

__all__ = [
    "Adam", "AutodiffError", "DomainError", "ShapeError", "Tape", "TapeError", "Tensor",
    "active_tape", "backward", "check_gradients", "is_grad_enabled", "load_arrays",
    "no_grad", "numeric_grad", "ops", "relative_error", "restore_params", "save_params",
]
