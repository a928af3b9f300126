"""Robot morphologies as undirected limb graphs, plus the matrices derived from them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

# Global limb-type registry. One-hot features need a fixed vocabulary across
# every morphology of an experiment suite.
LIMB_TYPES = ("torso", "thigh", "shin", "foot", "arm")
TORSO, THIGH, SHIN, FOOT, ARM = range(len(LIMB_TYPES))
NUM_LIMB_TYPES = len(LIMB_TYPES)


class MorphologyError(ValueError):
    """Base class for invalid morphologies."""


class DisconnectedError(MorphologyError):
    pass


class SelfLoopError(MorphologyError):
    pass


class DuplicateEdgeError(MorphologyError):
    pass


class NodeIndexError(MorphologyError):
    pass


class MorphologyParseError(MorphologyError):
    pass


@dataclass(frozen=True)
class Morphology:
    name: str
    num_nodes: int
    limb_types: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    root: int = 0
    # edges normalized to (i < j) and sorted; filled in __post_init__
    _neighbors: tuple[tuple[int, ...], ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "limb_types", tuple(int(t) for t in self.limb_types))
        object.__setattr__(self, "edges", tuple(sorted((min(int(i), int(j)), max(int(i), int(j)))
                                                      for i, j in self.edges)))
        nbrs: list[list[int]] = [[] for _ in range(max(self.num_nodes, 0))]
        for i, j in self.edges:
            if 0 <= i < self.num_nodes and 0 <= j < self.num_nodes:
                nbrs[i].append(j)
                if i != j:
                    nbrs[j].append(i)
        object.__setattr__(self, "_neighbors", tuple(tuple(sorted(n)) for n in nbrs))

    @property
    def K(self) -> int:
        return self.num_nodes

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self._neighbors[v]

    def degree(self, v: int) -> int:
        return len(self._neighbors[v])

    def leaves(self) -> list[int]:
        return [v for v in range(self.num_nodes) if self.degree(v) == 1 and v != self.root]


def validate(m: Morphology) -> None:
    """Raise a specific :class:`MorphologyError` subclass for the first violated invariant."""
    K = m.num_nodes
    if K < 1:
        raise NodeIndexError(f"{m.name}: need at least one node, got {K}")
    if len(m.limb_types) != K:
        raise NodeIndexError(f"{m.name}: {len(m.limb_types)} limb types for {K} nodes")
    if any(t < 0 for t in m.limb_types):
        raise NodeIndexError(f"{m.name}: negative limb type in {m.limb_types}")
    if not 0 <= m.root < K:
        raise NodeIndexError(f"{m.name}: root {m.root} out of range [0, {K})")
    for i, j in m.edges:
        if not (0 <= i < K and 0 <= j < K):
            raise NodeIndexError(f"{m.name}: edge ({i}, {j}) references a node outside [0, {K})")
        if i == j:
            raise SelfLoopError(f"{m.name}: self-loop on node {i}")
    if len(set(m.edges)) != len(m.edges):
        raise DuplicateEdgeError(f"{m.name}: duplicate edge")
    seen = {m.root}
    stack = [m.root]
    while stack:
        v = stack.pop()
        for u in m.neighbors(v):
            if u not in seen:
                seen.add(u)
                stack.append(u)
    if len(seen) != K:
        missing = sorted(set(range(K)) - seen)
        raise DisconnectedError(f"{m.name}: nodes {missing} unreachable from root {m.root}")


def adjacency(m: Morphology) -> np.ndarray:
    A = np.zeros((m.num_nodes, m.num_nodes))
    for i, j in m.edges:
        A[i, j] = A[j, i] = 1.0
    return A


def normalized_adjacency(A: np.ndarray) -> np.ndarray:
    """Symmetric GCN propagation matrix D^-1/2 (A + I) D^-1/2."""
    A_tilde = A + np.eye(A.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(A_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * A_tilde * d_inv_sqrt[None, :]


def floyd_distances(m: Morphology) -> np.ndarray:
    """All-pairs hop counts by Floyd-Warshall relaxation; every edge has length 1."""
    K = m.num_nodes
    dist = np.full((K, K), np.inf)
    np.fill_diagonal(dist, 0.0)
    for i, j in m.edges:
        dist[i, j] = dist[j, i] = 1.0
    for k in range(K):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    if np.isinf(dist).any():
        raise DisconnectedError(f"{m.name}: graph is disconnected")
    return dist.astype(np.int64)


def permute(m: Morphology, p: Sequence[int], name: str | None = None) -> Morphology:
    """Relabel nodes so that old node ``v`` becomes node ``p[v]``.

    With ``P[p[v], v] = 1`` the adjacency of the result is ``P A P^T``.
    """
    p = [int(x) for x in p]
    if sorted(p) != list(range(m.num_nodes)):
        raise ValueError(f"not a permutation of range({m.num_nodes}): {p}")
    types = [0] * m.num_nodes
    for v, t in enumerate(m.limb_types):
        types[p[v]] = t
    return Morphology(
        name=m.name if name is None else name,
        num_nodes=m.num_nodes,
        limb_types=tuple(types),
        edges=tuple((p[i], p[j]) for i, j in m.edges),
        root=p[m.root],
    )


def permutation_matrix(p: Sequence[int]) -> np.ndarray:
    P = np.zeros((len(p), len(p)))
    P[list(p), list(range(len(p)))] = 1.0
    return P


def to_dict(m: Morphology) -> dict:
    return {
        "name": m.name,
        "num_nodes": m.num_nodes,
        "root": m.root,
        "limb_types": list(m.limb_types),
        "edges": [list(e) for e in m.edges],
    }


_REQUIRED = ("name", "num_nodes", "root", "limb_types", "edges")


def from_dict(obj: dict, source: str = "<dict>") -> Morphology:
    if not isinstance(obj, dict):
        raise MorphologyParseError(f"{source}: expected a JSON object, got {type(obj).__name__}")
    for key in _REQUIRED:
        if key not in obj:
            raise MorphologyParseError(f"{source}: missing field {key!r}")
    try:
        raw_edges = [tuple(int(x) for x in e) for e in obj["edges"]]
        if any(len(e) != 2 for e in raw_edges):
            raise MorphologyParseError(f"{source}: every edge must be a pair")
        m = Morphology(
            name=str(obj["name"]),
            num_nodes=int(obj["num_nodes"]),
            limb_types=tuple(int(t) for t in obj["limb_types"]),
            edges=tuple(raw_edges),
            root=int(obj["root"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, MorphologyError):
            raise
        raise MorphologyParseError(f"{source}: bad field value: {exc}") from exc
    validate(m)
    return m


def _parse_json(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if text.splitlines() else ""
        raise MorphologyParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}\n  {line}") from exc


def save_morphology(m: Morphology, path) -> None:
    validate(m)
    Path(path).write_text(json.dumps(to_dict(m), indent=2) + "\n")


def load_morphology(path) -> Morphology:
    path = Path(path)
    return from_dict(_parse_json(path.read_text(), str(path)), str(path))


def save_morphologies(ms: Sequence[Morphology], path) -> None:
    """Write a morphology set file: a JSON list of morphology objects."""
    for m in ms:
        validate(m)
    Path(path).write_text(json.dumps([to_dict(m) for m in ms], indent=2) + "\n")


def load_morphologies(path) -> list[Morphology]:
    """Read either a single morphology object or a list of them."""
    path = Path(path)
    obj = _parse_json(path.read_text(), str(path))
    items = obj if isinstance(obj, list) else [obj]
    ms = [from_dict(o, f"{path}[{i}]") for i, o in enumerate(items)]
    names = [m.name for m in ms]
    if len(set(names)) != len(names):
        raise MorphologyParseError(f"{path}: duplicate morphology names")
    return ms
