"""Small building blocks for the localization networks.

Layers own named parameter tensors and expose ``named_parameters`` so that
training, checkpointing and gradient checks can treat a whole model as a
flat name -> tensor mapping. Weight matrices are initialized uniformly in
+-sqrt(6 / (fan_in + fan_out)); biases start at zero.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import GRUWeights, Tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Linear:
    """Affine map x @ W + b applied to each row of a 2-D (or a 1-D) input."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = ad.parameter(xavier_uniform(rng, in_dim, out_dim, dtype=dtype))
        self.bias = ad.parameter(np.zeros(out_dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


class MLP:
    """Stack of Linear layers with relu between them.

    ``relu_last`` controls whether the final layer is also followed by a
    relu (shared point layers are, output heads are not).
    """

    def __init__(self, widths: list[int], rng: np.random.Generator,
                 relu_last: bool = False, dtype=np.float32):
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.relu_last = relu_last

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.relu_last:
                x = ad.relu(x)
        return x

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}.{i}")


def make_gru_weights(in_dim: int, hidden: int, rng: np.random.Generator,
                     dtype=np.float32) -> GRUWeights:
    rows = in_dim + hidden

    def mat():
        return ad.parameter(xavier_uniform(rng, rows, hidden, dtype=dtype))

    def vec():
        return ad.parameter(np.zeros(hidden, dtype=dtype))

    return GRUWeights(mat(), vec(), mat(), vec(), mat(), vec())


def gru_named_parameters(w: GRUWeights, prefix: str) -> Iterator[tuple[str, Tensor]]:
    names = ["w_update", "b_update", "w_reset", "b_reset", "w_cand", "b_cand"]
    for name, tensor in zip(names, w.tensors()):
        yield f"{prefix}.{name}", tensor
