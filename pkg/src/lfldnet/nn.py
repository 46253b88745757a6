"""Fully connected stacks shared by the dynamics and reconstruction networks."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .rng import PortableRNG


def glorot_uniform(rng: PortableRNG, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform((fan_in, fan_out), -limit, limit).astype(dtype)


class MLP:
    """Affine layers with a shared hidden activation and a separate output one.

    ``sizes`` lists every layer width including input and output, so
    ``MLP([4, 8, 1])`` has one hidden layer of width 8.
    """

    def __init__(self, sizes, hidden_activation="gelu", output_activation="identity",
                 rng: PortableRNG | None = None, dtype=None, prefix="mlp"):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ConfigError(f"an MLP needs at least input and output sizes, got {sizes}")
        if any(s < 1 for s in sizes[1:]) or sizes[0] < 0:
            raise ConfigError(f"layer widths must be positive, got {sizes}")
        self.sizes = sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.prefix = prefix
        dtype = np.dtype(dtype or ad.get_default_dtype())
        rng = rng or PortableRNG(0)
        self.weights = []
        self.biases = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = glorot_uniform(rng.spawn(i), a, b, dtype)
            self.weights.append(ad.parameter(w, name=f"{prefix}.{i}.w"))
            self.biases.append(ad.parameter(np.zeros(b, dtype), name=f"{prefix}.{i}.b"))

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append((w.name, w))
            out.append((b.name, b))
        return out

    def __call__(self, x):
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"{self.prefix}: expected input [N, {self.n_in}], got {x.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = ad.linear(x, w, b)
            act = self.output_activation if i == last else self.hidden_activation
            if act != "identity":
                x = ad.activation(act, x)
        return x

    def count(self) -> int:
        return int(sum(p.size for _, p in self.parameters()))
