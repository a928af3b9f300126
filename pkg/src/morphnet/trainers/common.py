"""Pieces shared by the TD3 and PPO trainers: evaluation, GAE, sampling
probabilities, replay buffers and the metrics CSV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..env import EnvBatch, EnvConfig, random_actions
from ..graph import Morphology
from ..policy import Gcnt, actor_act


class TrainingDivergence(RuntimeError):
    """A loss or parameter became non-finite."""


def episode_seeds(seed: int, index: int, n: int) -> list[int]:
    """Reset seeds for ``n`` episodes of morphology ``index`` under base ``seed``."""
    return [int(s) for s in np.random.SeedSequence([seed, index]).generate_state(n)]


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class MorphReport:
    name: str
    mean_return: float
    stderr: float
    episode_len: float
    returns: np.ndarray


@dataclass
class EvalReport:
    per_morph: list[MorphReport]

    @property
    def average(self) -> float:
        return float(np.mean([r.mean_return for r in self.per_morph]))

    def by_name(self) -> dict[str, MorphReport]:
        return {r.name: r for r in self.per_morph}


def _stderr(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def run_episodes(ms: Sequence[Morphology], env_cfg: EnvConfig, episodes: int, seed: int,
                 policy: Gcnt | None = None, gamma: float | None = None) -> EvalReport:
    """Lockstep rollouts of the deterministic policy (or uniform random actions when
    ``policy`` is None). With ``gamma`` the discounted return is reported."""
    reports = []
    for idx, m in enumerate(ms):
        batch = EnvBatch(m, env_cfg, episode_seeds(seed, idx, episodes))
        rng = np.random.default_rng([seed, idx, 1])
        returns = np.zeros(episodes)
        discount = 1.0
        morph = None
        if policy is not None:
            with ad.no_grad():
                morph = policy.morph_features(m)
        done = False
        while not done:
            if policy is None:
                a = random_actions(rng, m, episodes)
            else:
                a = actor_act(policy, m, batch.observe(), morph=morph)["actions"][..., 0]
            r, done = batch.step(a)
            returns += discount * r
            if gamma is not None:
                discount *= gamma
        reports.append(MorphReport(m.name, float(returns.mean()), _stderr(returns), float(batch.t), returns))
    return EvalReport(reports)


def evaluate(policy: Gcnt, ms: Sequence[Morphology], env_cfg: EnvConfig, episodes: int = 10,
             seed: int = 0) -> EvalReport:
    return run_episodes(ms, env_cfg, episodes, seed, policy)


def random_policy_report(ms: Sequence[Morphology], env_cfg: EnvConfig, episodes: int = 20,
                         seed: int = 0) -> EvalReport:
    return run_episodes(ms, env_cfg, episodes, seed, None)


# ---------------------------------------------------------------------------
# advantage estimation and morphology sampling


def gae_advantages(rewards, values, dones, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates by reverse recursion.

    ``values`` has one more entry than ``rewards``: the last is the bootstrap
    value of the state after the final step. ``dones[t]`` cuts both the
    bootstrap and the recursion after step ``t``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = len(rewards)
    if values.shape[0] != T + 1 or dones.shape[0] != T:
        raise ValueError(f"need len(values) = len(rewards) + 1 = {T + 1} and len(dones) = {T}")
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return adv, adv + values[:T]


def sampling_prob_update(episode_lens: Sequence[float], max_len: float, floor: float = 1e-3) -> np.ndarray:
    """Sampling weights proportional to max(floor, max_len - mean_len + 1).

    Morphologies whose episodes end early get sampled more.
    """
    lens = np.asarray(episode_lens, dtype=np.float64)
    w = np.maximum(floor, max_len - lens + 1.0)
    return w / w.sum()


# ---------------------------------------------------------------------------
# replay


class ReplayBuffer:
    """FIFO ring buffer of transitions for a single morphology.

    Storage grows by doubling up to ``capacity``; after that the oldest
    transition is overwritten.
    """

    _FIELDS = ("s", "a", "r", "s2", "done", "terminal")

    def __init__(self, m: Morphology, obs_dim: int, action_dim: int = 1, capacity: int = 500_000):
        self.m = m
        self.capacity = capacity
        K = m.num_nodes
        n = min(capacity, 1024)
        self.s = np.zeros((n, K, obs_dim))
        self.a = np.zeros((n, K, action_dim))
        self.r = np.zeros(n)
        self.s2 = np.zeros((n, K, obs_dim))
        self.done = np.zeros(n, dtype=bool)
        self.terminal = np.zeros(n, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def _grow(self) -> None:
        n = min(self.capacity, 2 * len(self.r))
        for f in self._FIELDS:
            old = getattr(self, f)
            new = np.zeros((n,) + old.shape[1:], dtype=old.dtype)
            new[: len(old)] = old
            setattr(self, f, new)

    def add(self, s, a, r, s2, done, terminal=False) -> None:
        if self.size == len(self.r) and self.size < self.capacity:
            self._grow()
        i = self._next
        self.s[i] = s
        self.a[i] = np.asarray(a).reshape(self.a.shape[1:])
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = done
        self.terminal[i] = terminal
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        if self.size == 0:
            raise IndexError(f"replay buffer for {self.m.name} is empty")
        idx = rng.choice(self.size, size=min(batch, self.size), replace=False)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.terminal[idx]


# ---------------------------------------------------------------------------
# metrics


BASE_COLUMNS = ["step", "morphology", "mean_return", "stderr", "episode_len"]
AVERAGE_ROW = "ALL"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Append-only metrics CSV; the header is written when the file is created."""

    def __init__(self, path, extra_columns: Sequence[str] = ()):
        self.path = Path(path) if path is not None else None
        self.columns = BASE_COLUMNS + list(extra_columns)
        self.rows: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.columns)

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self.path is None:
            return
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row.get(c, "")) for c in self.columns])

    def write_report(self, step: int, report: EvalReport, extras: dict[str, dict] | None = None) -> None:
        extras = extras or {}
        for r in report.per_morph:
            self.write({"step": step, "morphology": r.name, "mean_return": r.mean_return,
                        "stderr": r.stderr, "episode_len": r.episode_len, **extras.get(r.name, {})})
        self.write({"step": step, "morphology": AVERAGE_ROW, "mean_return": report.average,
                    "stderr": _stderr(np.array([r.mean_return for r in report.per_morph])),
                    "episode_len": float(np.mean([r.episode_len for r in report.per_morph])),
                    **extras.get(AVERAGE_ROW, {})})


def check_finite(value: float, what: str) -> None:
    if not math.isfinite(value):
        raise TrainingDivergence(f"non-finite {what}: {value}")
