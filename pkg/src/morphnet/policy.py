"""The GCNT network: limb-observation encoder, morphology features (GCN + WL),
distance-biased transformer, global observation residual and per-limb decoder.

One :class:`Gcnt` instance is one network (actor, a Q critic, or a V critic).
Actor and critics share the architecture; only the decoder width and the
input width differ.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .gcn import GcnStack, gcn_stack_forward, init_gcn_stack, one_hot_features
from .graph import NUM_LIMB_TYPES, Morphology, adjacency, floyd_distances, normalized_adjacency
from .transformer import TransformerConfig, TransformerParams, init_transformer, transformer_forward
from .wl import WlConfig, morphology_histogram

MODES = ("deterministic", "td3_explore", "ppo_sample")
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GcntConfig:
    obs_dim: int
    num_types: int = NUM_LIMB_TYPES
    model: int = 128
    gcn_layers: int = 4
    gcn_width: int = 16
    wl_iterations: int = 3
    wl_bins: int = 32
    tf_layers: int = 3
    tf_heads: int = 2
    tf_feedforward: int = 256
    d_max: int = 16
    action_dim: int = 1
    use_gcn: bool = True
    use_wl: bool = True
    use_distance: bool = True

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.type in ("int", int) and v < 1:
                raise ValueError(f"GcntConfig.{f.name} must be positive, got {v}")
        self.transformer  # validates heads/model
        self.wl

    @property
    def transformer(self) -> TransformerConfig:
        return TransformerConfig(layers=self.tf_layers, heads=self.tf_heads, model=self.model,
                                 feedforward=self.tf_feedforward, d_max=self.d_max,
                                 use_distance=self.use_distance)

    @property
    def wl(self) -> WlConfig:
        return WlConfig(iterations=self.wl_iterations, bins=self.wl_bins)

    @property
    def morph_in(self) -> int:
        return self.gcn_width * self.use_gcn + self.wl_bins * self.use_wl

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> GcntConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class MorphologyEncoding:
    """Parameter-free structure of one morphology, computed once and cached."""
    a_hat: np.ndarray
    distances: np.ndarray
    histogram: np.ndarray
    one_hot: np.ndarray
    root_mask: np.ndarray  # (K, 1): 0 at the root, 1 elsewhere


@lru_cache(maxsize=256)
def encode_morphology(m: Morphology, wl_cfg: WlConfig, num_types: int) -> MorphologyEncoding:
    mask = np.ones((m.num_nodes, 1))
    mask[m.root] = 0.0
    return MorphologyEncoding(
        a_hat=normalized_adjacency(adjacency(m)),
        distances=floyd_distances(m),
        histogram=morphology_histogram(m, wl_cfg),
        one_hot=one_hot_features(m, num_types),
        root_mask=mask,
    )


class Gcnt:
    """Parameters and wiring of one GCNT network."""

    def __init__(self, cfg: GcntConfig, out_dim: int, prefix: str, seed: int = 0,
                 log_std_init: float | None = None):
        self.cfg = cfg
        self.out_dim = out_dim
        self.prefix = prefix
        rng = np.random.default_rng(seed)
        P = self.params = ParameterSet()
        M = cfg.model

        def lin(name, n_in, n_out):
            return P.new(f"{prefix}.{name}", ad.glorot_uniform(rng, n_in, n_out))

        self.obs_W1 = lin("obs.W1", cfg.obs_dim, M)
        self.obs_b1 = P.new(f"{prefix}.obs.b1", np.zeros(M))
        self.obs_W2 = lin("obs.W2", M, M)
        self.obs_b2 = P.new(f"{prefix}.obs.b2", np.zeros(M))
        self.gcn: GcnStack | None = None
        if cfg.use_gcn:
            self.gcn = init_gcn_stack(P, f"{prefix}.gcn", cfg.num_types, cfg.gcn_width,
                                      cfg.gcn_layers, rng)
        self.morph_proj = lin("morph_proj", cfg.morph_in, M) if cfg.morph_in else None
        self.transformer: TransformerParams = init_transformer(P, f"{prefix}.transformer",
                                                               cfg.transformer, rng)
        self.dec_W = lin("decoder.W", M, out_dim)
        self.dec_b = P.new(f"{prefix}.decoder.b", np.zeros(out_dim))
        self.log_std = None
        if log_std_init is not None:
            self.log_std = P.new(f"{prefix}.log_std", np.full(cfg.action_dim, log_std_init))

    def encoding(self, m: Morphology) -> MorphologyEncoding:
        return encode_morphology(m, self.cfg.wl, self.cfg.num_types)

    def morph_features(self, m: Morphology) -> Tensor | None:
        """Per-node morphology features (K, model), or None when GCN and WL are both off."""
        if self.morph_proj is None:
            return None
        enc = self.encoding(m)
        parts = []
        if self.gcn is not None:
            parts.append(gcn_stack_forward(m, self.gcn, enc.a_hat))
        if self.cfg.use_wl:
            parts.append(ad.constant(np.broadcast_to(enc.histogram, (m.num_nodes, self.cfg.wl_bins))))
        feats = parts[0] if len(parts) == 1 else ad.concat_cols(parts[0], parts[1])
        return feats @ self.morph_proj

    def encode_obs(self, obs) -> Tensor:
        obs = obs if isinstance(obs, Tensor) else ad.constant(obs)
        h = ad.relu(obs @ self.obs_W1 + self.obs_b1)
        return h @ self.obs_W2 + self.obs_b2

    def forward(self, m: Morphology, obs, morph: Tensor | None = None) -> Tensor:
        """Per-limb features (..., K, model) for observations (..., K, obs_dim).

        ``morph`` lets callers reuse precomputed morphology features while the
        parameters are unchanged (e.g. during a rollout).
        """
        obs = obs if isinstance(obs, Tensor) else ad.constant(obs)
        if obs.shape[-2] != m.num_nodes:
            raise ad.ShapeError(f"{m.name}: observation has {obs.shape[-2]} rows for K={m.num_nodes}")
        e = self.encode_obs(obs)
        if morph is None:
            morph = self.morph_features(m)
        z = e if morph is None else e + morph
        D = self.encoding(m).distances if self.cfg.use_distance else None
        y = transformer_forward(z, D, self.transformer)
        return y + e

    def decode(self, m: Morphology, obs, morph: Tensor | None = None) -> Tensor:
        return self.forward(m, obs, morph) @ self.dec_W + self.dec_b


# ---------------------------------------------------------------------------
# actor


def actor_pre_tanh(net: Gcnt, m: Morphology, obs, morph: Tensor | None = None) -> Tensor:
    return net.decode(m, obs, morph)


def actor_mean(net: Gcnt, m: Morphology, obs, morph: Tensor | None = None) -> Tensor:
    """Deterministic action tanh(decoder(...)), zero at the root; shape (..., K, action_dim)."""
    return ad.tanh(actor_pre_tanh(net, m, obs, morph)) * net.encoding(m).root_mask


def log1m_tanh_sq(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2) computed stably."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def actor_act(net: Gcnt, m: Morphology, obs, mode: str = "deterministic",
              rng: np.random.Generator | None = None, sigma: float = 0.126,
              morph: Tensor | None = None) -> dict:
    """Sample actions without recording a trace.

    Returns a dict with ``actions`` (..., K, action_dim) in [-1, 1] and the root
    row exactly 0. ``ppo_sample`` also returns the pre-squash sample ``u`` and
    its log-probability ``logp`` including the tanh change of variables.
    """
    if mode not in MODES:
        raise ValueError(f"unknown action mode {mode!r}; expected one of {MODES}")
    mask = net.encoding(m).root_mask
    with ad.no_grad():
        pre = actor_pre_tanh(net, m, obs, morph).data
    if mode == "deterministic":
        return {"actions": np.tanh(pre) * mask}
    if rng is None:
        raise ValueError(f"mode {mode!r} needs an rng")
    if mode == "td3_explore":
        noise = rng.normal(0.0, 1.0, size=pre.shape) * sigma
        return {"actions": np.clip(np.tanh(pre) + noise, -1.0, 1.0) * mask}
    if net.log_std is None:
        raise ValueError("ppo_sample needs a network with a log_std parameter")
    std = np.exp(net.log_std.data)
    u = pre + std * rng.normal(0.0, 1.0, size=pre.shape)
    u = u * mask
    logp = _gaussian_logp_np(u, pre, net.log_std.data, mask)
    return {"actions": np.tanh(u) * mask, "u": u, "logp": logp}


def _gaussian_logp_np(u, mean, log_std, mask) -> np.ndarray:
    z = (u - mean) * np.exp(-log_std)
    per = (-0.5 * z * z - log_std - _HALF_LOG_2PI - log1m_tanh_sq(u)) * mask
    return per.reshape(per.shape[:-2] + (-1,)).sum(axis=-1)


def ppo_log_prob(net: Gcnt, m: Morphology, obs, u: np.ndarray) -> Tensor:
    """Differentiable log-probability of stored pre-squash samples ``u``; shape (...)."""
    mask = net.encoding(m).root_mask
    mean = actor_pre_tanh(net, m, obs)
    z = (ad.constant(u) - mean) * ad.exp(-net.log_std)
    per = (ad.square(z) * -0.5 - net.log_std) * mask
    lead = per.shape[:-2]
    total = ad.sum_axis(ad.reshape(per, lead + (-1,)), -1)
    const = ((-_HALF_LOG_2PI - log1m_tanh_sq(u)) * mask).reshape(lead + (-1,)).sum(axis=-1)
    return total + const


# ---------------------------------------------------------------------------
# critics


def critic_value(net: Gcnt, m: Morphology, obs, actions=None) -> Tensor:
    """Scalar value per state: mean over limbs of the per-limb critic outputs.

    Q critics take actions appended to each limb's observation row; the V
    critic takes observations only.
    """
    x = obs if isinstance(obs, Tensor) else ad.constant(obs)
    if actions is not None:
        a = actions if isinstance(actions, Tensor) else ad.constant(actions)
        x = ad.concat_cols(x, a)
    per_limb = net.decode(m, x)
    return ad.mean_axis(ad.reshape(per_limb, per_limb.shape[:-1]), -1)


# ---------------------------------------------------------------------------
# embedding export


def embedding_header(width: int) -> list[str]:
    return ["morphology", "node", "limb_type"] + [f"f{i}" for i in range(width)]


def export_embeddings(ms: Sequence[Morphology], net: Gcnt, path) -> int:
    """Write per-node morphology features as CSV; return the number of data rows."""
    width = net.cfg.model
    rows = 0
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(embedding_header(width))
        for m in ms:
            with ad.no_grad():
                feats = net.morph_features(m)
            values = np.zeros((m.num_nodes, width)) if feats is None else feats.data
            for v in range(m.num_nodes):
                w.writerow([m.name, v, m.limb_types[v]] + [repr(float(x)) for x in values[v]])
                rows += 1
    return rows
