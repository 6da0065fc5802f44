"""Dense layers built on :mod:`lpssl.nn.tensor`."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu, "leaky_relu": T.leaky_relu, "sigmoid": T.sigmoid}


class Linear:
    """y = x W + b with W of shape (in, out).

    Weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) times ``scale``;
    ``scale=0`` gives an all-zero layer.
    """

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 scale: float = 1.0, bias: bool = True):
        bound = scale / np.sqrt(max(in_features, 1))
        w = rng.uniform(-bound, bound, size=(in_features, out_features))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, size=(out_features,)), requires_grad=True) \
            if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def __call__(self, x: Tensor, detach: bool = False) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise T.ShapeError("linear", x.shape, self.weight.shape)
        w = self.weight.detach() if detach else self.weight
        out = T.matmul(x, w)
        if self.bias is not None:
            out = out + (self.bias.detach() if detach else self.bias)
        return out

    def parameters(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class Sequential:
    """Alternating Linear layers and a fixed hidden activation."""

    def __init__(self, sizes: list[int], activation: str, rng: np.random.Generator,
                 last_scale: float = 1.0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self._act = ACTIVATIONS[activation]
        n = len(sizes) - 1
        self.layers = [Linear(sizes[i], sizes[i + 1], rng,
                              scale=last_scale if i == n - 1 else 1.0)
                       for i in range(n)]

    def __call__(self, x: Tensor, detach: bool = False) -> Tensor:
        """Forward pass; ``detach`` evaluates with the weights held constant."""
        for i, layer in enumerate(self.layers):
            x = layer(x, detach=detach)
            if i < len(self.layers) - 1:
                x = self._act(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]
