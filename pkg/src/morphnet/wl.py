"""Weisfeiler-Lehman color refinement and the fixed-width color histogram.

Colors are strings. Round 0 uses the limb type; each later round replaces a
node's color with the FNV-1a 64-bit digest of ``"own|n1,n2,..."`` built from
its sorted neighbor colors. An isolated node (only possible when K == 1) keeps
its color, so a single-node graph is already stable.

The histogram hashes every node color of every round into ``bins`` buckets
with the same FNV-1a function, so the feature width does not depend on the
morphology.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .graph import Morphology

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(text: str) -> int:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


@dataclass(frozen=True)
class WlConfig:
    iterations: int = 3
    bins: int = 32

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.bins < 4:
            raise ValueError(f"bins must be >= 4, got {self.bins}")


def wl_refine(m: Morphology, cfg: WlConfig = WlConfig()) -> list[list[str]]:
    """Return ``cfg.iterations + 1`` rounds of node colors (round 0 = limb types).

    Runs exactly ``cfg.iterations`` rounds; there is no convergence check.
    """
    colors = [[str(t) for t in m.limb_types]]
    for _ in range(cfg.iterations):
        prev = colors[-1]
        nxt = []
        for v in range(m.num_nodes):
            nbrs = m.neighbors(v)
            if not nbrs:
                nxt.append(prev[v])
                continue
            signature = prev[v] + "|" + ",".join(sorted(prev[u] for u in nbrs))
            nxt.append(f"{fnv1a_64(signature):016x}")
        colors.append(nxt)
    return colors


def color_multiset(colors: list[list[str]]) -> Counter:
    """Pre-hash signature: counts of every (round, color) pair."""
    return Counter((r, c) for r, row in enumerate(colors) for c in row)


def wl_counts(colors: list[list[str]], cfg: WlConfig = WlConfig()) -> np.ndarray:
    counts = np.zeros(cfg.bins, dtype=np.int64)
    for row in colors:
        for c in row:
            counts[fnv1a_64(c) % cfg.bins] += 1
    return counts


def wl_histogram(colors: list[list[str]], cfg: WlConfig = WlConfig()) -> np.ndarray:
    """Bin counts normalized by K * (iterations + 1); entries sum to 1."""
    counts = wl_counts(colors, cfg)
    return counts / counts.sum()


def morphology_histogram(m: Morphology, cfg: WlConfig = WlConfig()) -> np.ndarray:
    return wl_histogram(wl_refine(m, cfg), cfg)
