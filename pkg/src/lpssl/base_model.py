"""The base predictor: an MLP from inputs to distribution parameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import tensor as T
from .nn.layers import Sequential
from .nn.tensor import Tensor, no_grad


@dataclass
class MlpConfig:
    input_dim: int
    output_dim: int
    hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    head: str = "softmax"  # softmax over K classes, or per-attribute sigmoid

    def __post_init__(self):
        if not self.hidden:
            raise ValueError("MLP needs at least one hidden layer")
        if self.head not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "softmax" and self.output_dim < 2:
            raise ValueError("softmax head needs K >= 2")
        if self.output_dim < 1:
            raise ValueError("output_dim must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class BaseModel:
    def __init__(self, config: MlpConfig, rng: np.random.Generator):
        self.config = config
        sizes = [config.input_dim, *config.hidden, config.output_dim]
        self.net = Sequential(sizes, config.activation, rng)

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def logits(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise T.ShapeError("predict", x.shape, (None, self.config.input_dim))
        return self.net(x)

    def predict(self, x) -> Tensor:
        """Predicted parameters, one row per input: simplex points or per-attribute probabilities."""
        out = self.logits(x)
        if self.config.head == "softmax":
            return T.softmax(out, axis=-1)
        return T.sigmoid(out)

    def predict_numpy(self, x) -> np.ndarray:
        with no_grad():
            return self.predict(x).data


def accuracy(model: BaseModel, x: np.ndarray, y: np.ndarray, task: str | None = None) -> float:
    """Argmax accuracy for classification; exact-match accuracy for attributes."""
    if len(x) == 0:
        raise ValueError("accuracy: empty set")
    theta = model.predict_numpy(np.asarray(x, dtype=np.float64))
    task = task or ("classification" if model.config.head == "softmax" else "attributes")
    return prediction_accuracy(theta, y, task)


def prediction_accuracy(theta: np.ndarray, y: np.ndarray, task: str) -> float:
    theta = np.asarray(theta)
    y = np.asarray(y)
    if len(theta) == 0:
        raise ValueError("accuracy: empty set")
    if task == "classification":
        return float(np.mean(np.argmax(theta, axis=1) == y.astype(int)))
    if task == "attributes":
        bits = (theta > 0.5).astype(int)
        return float(np.mean(np.all(bits == y.astype(int), axis=1)))
    raise ValueError(f"unknown task {task!r}")
