"""GraphSAGE-mean layer, node batch normalisation and MLP blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SLOPE = 0.01
NORM_EPS = 1e-5


def glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class Linear:
    weight: Tensor  # out x in
    bias: Tensor | None  # 1 x out

    @classmethod
    def init(cls, rng, in_dim, out_dim, bias=True):
        w = ad.parameter(glorot(rng, out_dim, in_dim))
        b = ad.parameter(np.zeros((1, out_dim))) if bias else None
        return cls(w, b)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def __call__(self, x):
        out = ad.matmul(x, ad.transpose(self.weight))
        return out if self.bias is None else ad.add(out, self.bias)


@dataclass
class SageLayer:
    linear: Linear
    slope: float = SLOPE

    @classmethod
    def init(cls, rng, in_dim, out_dim, bias=True, slope=SLOPE):
        return cls(Linear.init(rng, in_dim, out_dim, bias), slope)

    def parameters(self):
        return self.linear.parameters()


def sage_forward(graph, features, layer):
    """act(W . MEAN(v_u, u in N(k) + {k}) + b) for every node k.

    ``graph`` is a :class:`~milgraph.graph.BagGraph` or a
    :class:`~milgraph.graph.GraphBatch`; both supply ``mean_operator()``.
    """
    agg = ad.sparse_matmul(graph.mean_operator(), features)
    return ad.leaky_relu(layer.linear(agg), layer.slope)


@dataclass
class NormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = NORM_EPS

    @classmethod
    def init(cls, dim, momentum=0.1):
        return cls(
            ad.parameter(np.ones((1, dim))),
            ad.parameter(np.zeros((1, dim))),
            np.zeros((1, dim)),
            np.ones((1, dim)),
            momentum,
        )

    def parameters(self):
        return [self.gamma, self.beta]


def norm_forward(state, features, train):
    """Batch normalisation over node rows.

    In train mode statistics come from every row of ``features`` (the
    caller stacks all graphs of the mini-batch) and running statistics are
    updated in place; eval mode uses the running statistics.
    """
    if train:
        mean = ad.col_mean(features)
        centered = ad.sub(features, mean)
        var = ad.col_mean(ad.mul(centered, centered))
        normed = ad.mul(centered, ad.power(ad.add(var, state.eps), -0.5))
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean.value
        state.running_var = (1 - m) * state.running_var + m * var.value
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        normed = ad.mul(ad.sub(features, state.running_mean), inv)
    return ad.add(ad.mul(normed, state.gamma), state.beta)


@dataclass
class MlpBlock:
    layers: list[Linear] = field(default_factory=list)
    slope: float = SLOPE
    final_activation: bool = False

    @classmethod
    def init(cls, rng, dims, slope=SLOPE, final_activation=False):
        layers = [Linear.init(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        return cls(layers, slope, final_activation)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def mlp_forward(block, x):
    """Affine layers with leaky ReLU between them; the last stays linear
    unless ``block.final_activation`` is set."""
    n = len(block.layers)
    for i, layer in enumerate(block.layers):
        x = layer(x)
        if i < n - 1 or block.final_activation:
            x = ad.leaky_relu(x, block.slope)
    return x
