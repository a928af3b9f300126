"""Residual GCN stack: H' = relu(Â H W1) W2 + H over one-hot limb-type features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ParameterSet, Tensor
from .graph import Morphology, adjacency, normalized_adjacency


@dataclass
class GcnLayerParams:
    W1: Parameter
    W2: Parameter

    def __post_init__(self):
        d = self.W1.shape[0]
        if self.W1.shape != (d, d) or self.W2.shape != (d, d):
            raise ad.ShapeError(f"GCN layer weights must be square and equal, got {self.W1.shape}, {self.W2.shape}")


@dataclass
class GcnStack:
    input_embed: Parameter
    layers: list[GcnLayerParams]

    @property
    def width(self) -> int:
        return self.input_embed.shape[1]

    @property
    def num_types(self) -> int:
        return self.input_embed.shape[0]


def init_gcn_stack(params: ParameterSet, prefix: str, num_types: int, width: int = 16,
                   layers: int = 4, rng: np.random.Generator | None = None) -> GcnStack:
    if layers < 1:
        raise ValueError("GCN stack needs at least one layer")
    rng = rng or np.random.default_rng(0)
    embed = params.new(f"{prefix}.input_embed", ad.glorot_uniform(rng, num_types, width))
    stack = []
    for i in range(layers):
        W1 = params.new(f"{prefix}.layer{i}.W1", ad.glorot_uniform(rng, width, width))
        W2 = params.new(f"{prefix}.layer{i}.W2", ad.glorot_uniform(rng, width, width))
        stack.append(GcnLayerParams(W1, W2))
    return GcnStack(embed, stack)


def one_hot_features(m: Morphology, num_types: int) -> np.ndarray:
    types = np.asarray(m.limb_types)
    if types.size and types.max() >= num_types:
        raise ValueError(f"{m.name}: limb type {types.max()} outside vocabulary of size {num_types}")
    X = np.zeros((m.num_nodes, num_types))
    X[np.arange(m.num_nodes), types] = 1.0
    return X


def gcn_layer_forward(h: Tensor, a_hat, p: GcnLayerParams) -> Tensor:
    a_hat = a_hat if isinstance(a_hat, Tensor) else ad.constant(a_hat)
    if a_hat.shape[-1] != h.shape[-2]:
        raise ad.ShapeError(f"gcn layer: adjacency {a_hat.shape} vs features {h.shape}")
    return ad.relu(a_hat @ h @ p.W1) @ p.W2 + h


def gcn_stack_forward(m: Morphology, stack: GcnStack, a_hat: np.ndarray | None = None) -> Tensor:
    """Per-node morphology features, shape (K, d)."""
    if a_hat is None:
        a_hat = normalized_adjacency(adjacency(m))
    a_hat = ad.constant(a_hat)
    h = ad.constant(one_hot_features(m, stack.num_types)) @ stack.input_embed
    for layer in stack.layers:
        h = gcn_layer_forward(h, a_hat, layer)
    return h
