"""Deterministic planar chain-robot surrogate for locomotion benchmarks.

Each non-root limb has one hinge joint driven by a torque in [-1, 1]. Joint
velocities integrate gear-scaled torque with linear damping; the base moves
with v = sum_k c(type_k) sin(theta_k) theta_dot_k, so progress depends on
which limb types sit where and how their joints are phased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import ARM, FOOT, NUM_LIMB_TYPES, SHIN, THIGH, TORSO, Morphology, floyd_distances, validate

FAMILIES = ("chain_walker", "chain_mixed")


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.05
    episode_len: int = 200
    ctrl_cost: float = 0.05
    damping: float = 0.5
    # indexed by limb type: torso, thigh, shin, foot, arm
    gear: tuple[float, ...] = (0.0, 12.0, 10.0, 8.0, 10.0)
    propulsion: tuple[float, ...] = (0.0, 1.0, 0.7, 0.45, 0.0)
    joint_range: float = math.pi / 2
    omega_max: float = 8.0
    init_noise: float = 0.1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.episode_len < 1:
            raise ValueError("episode_len must be >= 1")
        if self.joint_range <= 0 or self.omega_max <= 0:
            raise ValueError("joint_range and omega_max must be positive")
        if len(self.gear) != NUM_LIMB_TYPES or len(self.propulsion) != NUM_LIMB_TYPES:
            raise ValueError(f"gear and propulsion need one entry per limb type ({NUM_LIMB_TYPES})")

    @property
    def gear_max(self) -> float:
        return max(self.gear) or 1.0

    @property
    def c_max(self) -> float:
        return max(abs(c) for c in self.propulsion)

    def obs_dim(self) -> int:
        return NUM_LIMB_TYPES + 6

    def reward_bounds(self, K: int) -> tuple[float, float]:
        span = self.c_max * self.omega_max * self.dt * K
        return -self.ctrl_cost * K - span, span


@dataclass
class EnvState:
    x: float
    theta: np.ndarray
    theta_dot: np.ndarray
    t: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), repr=False)
    clamped_actions: int = 0


def _limb_arrays(m: Morphology, cfg: EnvConfig):
    types = np.asarray(m.limb_types)
    active = np.ones(m.num_nodes)
    active[m.root] = 0.0
    gear = np.asarray(cfg.gear)[types] * active
    prop = np.asarray(cfg.propulsion)[types] * active
    return active, gear, prop


def _dynamics(theta, theta_dot, a, gear, prop, cfg: EnvConfig):
    dt = cfg.dt
    theta_dot = np.clip(theta_dot + dt * (gear * a - cfg.damping * theta_dot), -cfg.omega_max, cfg.omega_max)
    theta = np.clip(theta + dt * theta_dot, -cfg.joint_range, cfg.joint_range)
    v = (prop * np.sin(theta) * theta_dot).sum(axis=-1)
    reward = dt * v - cfg.ctrl_cost * (a * a).sum(axis=-1)
    return theta, theta_dot, v, reward


def _clean_actions(actions, m: Morphology, K_shape) -> tuple[np.ndarray, int]:
    a = np.asarray(actions, dtype=np.float64).reshape(K_shape)
    bad = int(np.count_nonzero(np.abs(a) > 1.0))
    a = np.clip(a, -1.0, 1.0)
    a[..., m.root] = 0.0
    return a, bad


def reset(m: Morphology, cfg: EnvConfig = EnvConfig(), seed: int = 0) -> EnvState:
    validate(m)
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-cfg.init_noise, cfg.init_noise, size=m.num_nodes)
    theta[m.root] = 0.0
    return EnvState(x=0.0, theta=theta, theta_dot=np.zeros(m.num_nodes), t=0, rng=rng)


def step(state: EnvState, actions, m: Morphology, cfg: EnvConfig = EnvConfig()):
    """Advance one step; returns (next_state, reward, done).

    Out-of-range actions are clamped and counted on the state; the root action
    is ignored.
    """
    a, bad = _clean_actions(actions, m, (m.num_nodes,))
    _, gear, prop = _limb_arrays(m, cfg)
    theta, theta_dot, v, reward = _dynamics(state.theta, state.theta_dot, a, gear, prop, cfg)
    t = state.t + 1
    nxt = EnvState(x=state.x + cfg.dt * float(v), theta=theta, theta_dot=theta_dot, t=t,
                   rng=state.rng, clamped_actions=state.clamped_actions + bad)
    return nxt, float(reward), t == cfg.episode_len


def _observe_arrays(theta, theta_dot, m: Morphology, cfg: EnvConfig) -> np.ndarray:
    K = m.num_nodes
    lead = theta.shape[:-1]
    types = np.asarray(m.limb_types)
    depth = floyd_distances(m)[m.root] / K
    gear = np.asarray(cfg.gear)[types] / cfg.gear_max
    one_hot = np.zeros((K, NUM_LIMB_TYPES))
    one_hot[np.arange(K), types] = 1.0
    static = np.concatenate([one_hot, depth[:, None], gear[:, None]], axis=1)
    dyn = np.stack([
        np.sin(theta),
        np.cos(theta),
        theta_dot / cfg.omega_max,
        (theta + cfg.joint_range) / (2.0 * cfg.joint_range),
    ], axis=-1)
    static = np.broadcast_to(static, lead + static.shape)
    return np.concatenate([static[..., :NUM_LIMB_TYPES], dyn, static[..., NUM_LIMB_TYPES:]], axis=-1)


def observe(state: EnvState, m: Morphology, cfg: EnvConfig = EnvConfig()) -> np.ndarray:
    """Per-limb observation rows (K, obs_dim):
    one-hot type, sin, cos, normalized velocity, position in range, depth/K, gear/g_max."""
    return _observe_arrays(state.theta, state.theta_dot, m, cfg)


class EnvBatch:
    """``n`` independent copies of one morphology stepped in lockstep.

    Copy ``i`` starts from ``reset(m, cfg, seeds[i])``, so a batch of one
    reproduces the single-environment trajectory.
    """

    def __init__(self, m: Morphology, cfg: EnvConfig, seeds):
        validate(m)
        self.m = m
        self.cfg = cfg
        states = [reset(m, cfg, int(s)) for s in seeds]
        self.theta = np.stack([s.theta for s in states])
        self.theta_dot = np.zeros_like(self.theta)
        self.x = np.zeros(len(states))
        self.t = 0
        self.clamped_actions = 0
        _, self._gear, self._prop = _limb_arrays(m, cfg)

    def __len__(self) -> int:
        return self.theta.shape[0]

    def observe(self) -> np.ndarray:
        return _observe_arrays(self.theta, self.theta_dot, self.m, self.cfg)

    def step(self, actions):
        a, bad = _clean_actions(actions, self.m, self.theta.shape)
        self.clamped_actions += bad
        self.theta, self.theta_dot, v, reward = _dynamics(self.theta, self.theta_dot, a,
                                                          self._gear, self._prop, self.cfg)
        self.x = self.x + self.cfg.dt * v
        self.t += 1
        return reward, self.t == self.cfg.episode_len


# ---------------------------------------------------------------------------
# reference policies


def random_actions(rng: np.random.Generator, m: Morphology, n: int | None = None) -> np.ndarray:
    shape = (m.num_nodes,) if n is None else (n, m.num_nodes)
    a = rng.uniform(-1.0, 1.0, size=shape)
    a[..., m.root] = 0.0
    return a


def gait_actions(theta: np.ndarray, theta_dot: np.ndarray, m: Morphology) -> np.ndarray:
    """Hand-written gait: drive every joint toward the limit it is already leaning to.

    Joints pinned at a limit while still pushing keep generating thrust.
    """
    lean = np.where(np.abs(theta) > 1e-12, np.sign(theta), np.where(theta_dot < 0, -1.0, 1.0))
    a = lean.astype(np.float64)
    a[..., m.root] = 0.0
    return a


def rollout_return(m: Morphology, cfg: EnvConfig, policy: str, seed: int) -> float:
    """Undiscounted return of one episode under ``"random"``, ``"zero"`` or ``"gait"``."""
    state = reset(m, cfg, seed)
    rng = np.random.default_rng(seed + 7919)
    total = 0.0
    done = False
    while not done:
        if policy == "random":
            a = random_actions(rng, m)
        elif policy == "zero":
            a = np.zeros(m.num_nodes)
        elif policy == "gait":
            a = gait_actions(state.theta, state.theta_dot, m)
        else:
            raise ValueError(f"unknown reference policy {policy!r}")
        state, r, done = step(state, a, m, cfg)
        total += r
    return total


def random_baseline(m: Morphology, cfg: EnvConfig, episodes: int = 20, seed: int = 0) -> float:
    return float(np.mean([rollout_return(m, cfg, "random", seed + i) for i in range(episodes)]))


# ---------------------------------------------------------------------------
# morphology families


def _walker(n: int) -> Morphology:
    legs = (THIGH, SHIN, FOOT)
    types = [TORSO] + [legs[i % 3] for i in range(n - 1)]
    return Morphology(f"chain_walker_{n}", n, tuple(types), tuple((i, i + 1) for i in range(n - 1)), 0)


def _drop_node(m: Morphology, drop: int, name: str) -> Morphology:
    keep = [v for v in range(m.num_nodes) if v != drop]
    new = {v: i for i, v in enumerate(keep)}
    return Morphology(
        name=name,
        num_nodes=len(keep),
        limb_types=tuple(m.limb_types[v] for v in keep),
        edges=tuple((new[i], new[j]) for i, j in m.edges if drop not in (i, j)),
        root=new[m.root],
    )


def generate_family(kind: str, sizes, seed: int = 0, variants: bool = True) -> list[Morphology]:
    """Deterministic morphologies named ``{kind}_{size}``.

    With ``variants`` each size also gets a ``..._missing`` morphology with one
    leaf limb removed (K = size - 1).
    """
    if kind not in FAMILIES:
        raise ValueError(f"unknown family {kind!r}; expected one of {FAMILIES}")
    rng = np.random.default_rng(seed)
    out: list[Morphology] = []
    for n in sizes:
        n = int(n)
        if n < 2:
            raise ValueError(f"morphology size must be >= 2, got {n}")
        if kind == "chain_walker":
            m = _walker(n)
        else:
            parents = [int(rng.integers(0, i)) for i in range(1, n)]
            types = [TORSO] + [int(t) for t in rng.choice([THIGH, SHIN, FOOT, ARM], size=n - 1)]
            m = Morphology(f"chain_mixed_{n}", n, tuple(types),
                           tuple((p, i + 1) for i, p in enumerate(parents)), 0)
        validate(m)
        out.append(m)
        if variants and n > 2:
            leaves = m.leaves()
            drop = leaves[-1] if kind == "chain_walker" else int(rng.choice(leaves))
            v = _drop_node(m, drop, f"{m.name}_missing")
            validate(v)
            out.append(v)
    return out
