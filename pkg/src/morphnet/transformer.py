"""Pre-norm transformer whose attention scores carry a learnable per-head hop-distance bias."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ParameterSet, Tensor


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 3
    heads: int = 2
    model: int = 128
    feedforward: int = 256
    d_max: int = 16
    use_distance: bool = True

    def __post_init__(self):
        for name in ("layers", "heads", "model", "feedforward", "d_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.model % self.heads:
            raise ValueError(f"model width {self.model} not divisible by {self.heads} heads")

    @property
    def head_width(self) -> int:
        return self.model // self.heads


@dataclass
class DistanceEmbeddingTable:
    table: Parameter  # (d_max + 1, heads)

    @property
    def d_max(self) -> int:
        return self.table.shape[0] - 1


@dataclass
class AttentionLayerParams:
    Wq: Parameter
    Wk: Parameter
    Wv: Parameter
    Wo: Parameter
    heads: int

    def __post_init__(self):
        if self.Wq.shape[1] % self.heads:
            raise ValueError(f"width {self.Wq.shape[1]} not divisible by {self.heads} heads")


@dataclass
class BlockParams:
    ln1_gain: Parameter
    ln1_bias: Parameter
    attn: AttentionLayerParams
    ln2_gain: Parameter
    ln2_bias: Parameter
    ff_W1: Parameter
    ff_b1: Parameter
    ff_W2: Parameter
    ff_b2: Parameter


@dataclass
class TransformerParams:
    blocks: list[BlockParams]
    final_gain: Parameter
    final_bias: Parameter
    distance: DistanceEmbeddingTable | None


def init_transformer(params: ParameterSet, prefix: str, cfg: TransformerConfig,
                     rng: np.random.Generator) -> TransformerParams:
    M, F = cfg.model, cfg.feedforward

    def lin(name, n_in, n_out):
        return params.new(f"{prefix}.{name}", ad.glorot_uniform(rng, n_in, n_out))

    blocks = []
    for i in range(cfg.layers):
        b = f"block{i}"
        attn = AttentionLayerParams(lin(f"{b}.attn.Wq", M, M), lin(f"{b}.attn.Wk", M, M),
                                    lin(f"{b}.attn.Wv", M, M), lin(f"{b}.attn.Wo", M, M), cfg.heads)
        blocks.append(BlockParams(
            ln1_gain=params.new(f"{prefix}.{b}.ln1.gain", np.ones(M)),
            ln1_bias=params.new(f"{prefix}.{b}.ln1.bias", np.zeros(M)),
            attn=attn,
            ln2_gain=params.new(f"{prefix}.{b}.ln2.gain", np.ones(M)),
            ln2_bias=params.new(f"{prefix}.{b}.ln2.bias", np.zeros(M)),
            ff_W1=lin(f"{b}.ff.W1", M, F),
            ff_b1=params.new(f"{prefix}.{b}.ff.b1", np.zeros(F)),
            ff_W2=lin(f"{b}.ff.W2", F, M),
            ff_b2=params.new(f"{prefix}.{b}.ff.b2", np.zeros(M)),
        ))
    final_gain = params.new(f"{prefix}.final_ln.gain", np.ones(M))
    final_bias = params.new(f"{prefix}.final_ln.bias", np.zeros(M))
    distance = None
    if cfg.use_distance:
        # zeros: attention starts out unbiased
        distance = DistanceEmbeddingTable(params.new(f"{prefix}.distance_table",
                                                     np.zeros((cfg.d_max + 1, cfg.heads))))
    return TransformerParams(blocks, final_gain, final_bias, distance)


def distance_bias(D: np.ndarray, tbl: DistanceEmbeddingTable) -> Tensor:
    """Per-head bias ``bias[h, i, j] = table[min(D[i, j], d_max), h]``, shape (H, K, K)."""
    idx = np.minimum(np.asarray(D, dtype=np.int64), tbl.d_max)
    return ad.transpose(ad.take_rows(tbl.table, idx), (2, 0, 1))


def _split_heads(t: Tensor, heads: int) -> Tensor:
    # (..., K, M) -> (..., H, K, dh)
    *lead, K, M = t.shape
    t = ad.reshape(t, (*lead, K, heads, M // heads))
    n = len(lead)
    return ad.transpose(t, (*range(n), n + 1, n, n + 2))


def _merge_heads(t: Tensor) -> Tensor:
    *lead, H, K, dh = t.shape
    n = len(lead)
    t = ad.transpose(t, (*range(n), n + 1, n, n + 2))
    return ad.reshape(t, (*lead, K, H * dh))


def attention_weights(x: Tensor, bias: Tensor | None, p: AttentionLayerParams) -> tuple[Tensor, Tensor]:
    """Return (weights (..., H, K, K), values (..., H, K, dh))."""
    q = _split_heads(x @ p.Wq, p.heads)
    k = _split_heads(x @ p.Wk, p.heads)
    v = _split_heads(x @ p.Wv, p.heads)
    n = k.ndim
    kT = ad.transpose(k, (*range(n - 2), n - 1, n - 2))
    scores = (q @ kT) * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        scores = scores + bias
    return ad.softmax_rows(scores), v


def biased_attention(x: Tensor, bias: Tensor | None, p: AttentionLayerParams) -> Tensor:
    weights, v = attention_weights(x, bias, p)
    return _merge_heads(weights @ v) @ p.Wo


def feedforward(x: Tensor, b: BlockParams) -> Tensor:
    return ad.relu(x @ b.ff_W1 + b.ff_b1) @ b.ff_W2 + b.ff_b2


def transformer_block(x: Tensor, bias: Tensor | None, b: BlockParams) -> Tensor:
    h = x + biased_attention(ad.layer_norm(x, b.ln1_gain, b.ln1_bias), bias, b.attn)
    return h + feedforward(ad.layer_norm(h, b.ln2_gain, b.ln2_bias), b)


def transformer_forward(x: Tensor, D: np.ndarray | None, tp: TransformerParams) -> Tensor:
    """Run every block with one shared distance bias, then the final LayerNorm.

    The bias is dropped when the parameters carry no distance table (the
    distance-ablated, plain-attention variant) or when ``D`` is None.
    """
    bias = None
    if tp.distance is not None and D is not None:
        bias = distance_bias(D, tp.distance)
    for b in tp.blocks:
        x = transformer_block(x, bias, b)
    return ad.layer_norm(x, tp.final_gain, tp.final_bias)
