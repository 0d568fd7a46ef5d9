"""Fully connected layers built on the autodiff tape."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ShapeError


class DenseLayer:
    """``activation(x @ W.T + b)`` with ``W`` shaped (out, in).

    Weights start Glorot-uniform in +-sqrt(6 / (fan_in + fan_out)); biases
    start at zero.
    """

    def __init__(self, n_in, n_out, activation="relu", rng=None, name="dense"):
        if activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng() if rng is None else rng
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.n_in, self.n_out = n_in, n_out
        self.activation = activation
        self.weights = ad.Parameter(rng.uniform(-limit, limit, size=(n_out, n_in)), f"{name}.W")
        self.bias = ad.Parameter(np.zeros(n_out), f"{name}.b")

    def parameters(self):
        return [self.weights, self.bias]

    def __call__(self, tape, x):
        width = ad._val(x).shape[-1]
        if width != self.n_in:
            raise ShapeError(f"{self.weights.name}: expected input width {self.n_in}, got {width}")
        w = tape.watch(self.weights)
        b = tape.watch(self.bias)
        h = ad.linear(x, w, b)
        return ad.ACTIVATIONS[self.activation](h)


class MLP:
    """A stack of dense layers; ``widths`` includes the input width."""

    def __init__(self, widths, activations, rng=None, name="mlp"):
        if len(activations) != len(widths) - 1:
            raise ValueError("need one activation per layer")
        self.layers = [
            DenseLayer(widths[i], widths[i + 1], activations[i], rng, f"{name}.{i}")
            for i in range(len(activations))
        ]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, tape, x):
        for layer in self.layers:
            x = layer(tape, x)
        return x
