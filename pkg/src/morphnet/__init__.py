"""Morphology-agnostic control policies: a GCN + Weisfeiler-Lehman +
distance-biased transformer network shared across modular robots, with joint
TD3 and PPO training on a family of planar chain robots."""

from .graph import Morphology
from .policy import Gcnt, GcntConfig

__version__ = "0.1.0"
__all__ = ["Gcnt", "GcntConfig", "Morphology", "__version__"]
