from .layers import Linear, Sequential
from .optim import Adam, AdamState
from .tensor import ShapeError, Tape, Tensor, no_grad

__all__ = ["Adam", "AdamState", "Linear", "Sequential", "ShapeError", "Tape", "Tensor", "no_grad"]
