"""Joint multi-morphology TD3: one shared actor and twin critics, a replay
buffer per morphology, round-robin episode collection followed by an update
pass over every morphology."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Adam, ParameterSet
from ..env import EnvConfig, observe, random_actions, reset, step
from ..graph import Morphology
from ..policy import Gcnt, GcntConfig, actor_act, actor_mean, critic_value
from .common import MetricsWriter, ReplayBuffer, check_finite, evaluate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Td3Config:
    batch: int = 100
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    tau: float = 0.046
    explore_sigma: float = 0.126
    gamma: float = 0.99
    policy_update_interval: int = 2
    initial_explore_steps: int = 10_000
    lr: float = 1e-4
    grad_clip: float = 0.1
    buffer_capacity: int = 500_000
    updates_per_episode: int = 1
    eval_interval: int = 5_000
    eval_episodes: int = 5


@dataclass
class TrainResult:
    networks: dict[str, Gcnt]
    metrics: list[dict]
    info: dict = field(default_factory=dict)

    @property
    def actor(self) -> Gcnt:
        return self.networks["actor"]


def polyak_update(target: ParameterSet, online: ParameterSet, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, parameter by parameter."""
    for t, o in zip(target, online):
        t.data = tau * o.data + (1.0 - tau) * t.data


def critic_config(cfg: GcntConfig) -> GcntConfig:
    return replace(cfg, obs_dim=cfg.obs_dim + cfg.action_dim)


class Td3Learner:
    """Networks, targets, optimizers and the per-morphology update rule."""

    def __init__(self, net_cfg: GcntConfig, cfg: Td3Config, seed: int):
        self.cfg = cfg
        self.net_cfg = net_cfg
        ccfg = critic_config(net_cfg)
        self.actor = Gcnt(net_cfg, net_cfg.action_dim, "actor", seed=seed)
        self.q1 = Gcnt(ccfg, 1, "q1", seed=seed + 1)
        self.q2 = Gcnt(ccfg, 1, "q2", seed=seed + 2)
        self.actor_t = Gcnt(net_cfg, net_cfg.action_dim, "actor", seed=seed)
        self.q1_t = Gcnt(ccfg, 1, "q1", seed=seed + 1)
        self.q2_t = Gcnt(ccfg, 1, "q2", seed=seed + 2)
        self.critics = ParameterSet(list(self.q1.params) + list(self.q2.params))
        self.actor_opt = Adam(self.actor.params, lr=cfg.lr, grad_clip=cfg.grad_clip)
        self.critic_opt = Adam(self.critics, lr=cfg.lr, grad_clip=cfg.grad_clip)
        self.iterations = 0

    def update(self, m: Morphology, buf: ReplayBuffer, rng: np.random.Generator) -> float:
        cfg = self.cfg
        s, a, r, s2, terminal = buf.sample(cfg.batch, rng)
        mask = self.actor.encoding(m).root_mask
        with ad.no_grad():
            noise = np.clip(rng.normal(0.0, cfg.policy_noise, size=a.shape), -cfg.noise_clip, cfg.noise_clip)
            a2 = np.clip(actor_mean(self.actor_t, m, s2).data + noise, -1.0, 1.0) * mask
            q_next = np.minimum(critic_value(self.q1_t, m, s2, a2).data,
                                critic_value(self.q2_t, m, s2, a2).data)
            y = r + cfg.gamma * (1.0 - terminal) * q_next
        target = ad.constant(y)
        loss = (ad.mean_all(ad.square(critic_value(self.q1, m, s, a) - target))
                + ad.mean_all(ad.square(critic_value(self.q2, m, s, a) - target)))
        critic_loss = loss.item()
        check_finite(critic_loss, "critic loss")
        ad.backward(loss)
        self.critic_opt.step()

        self.iterations += 1
        if self.iterations % cfg.policy_update_interval == 0:
            actor_loss = -ad.mean_all(critic_value(self.q1, m, s, actor_mean(self.actor, m, s)))
            check_finite(actor_loss.item(), "actor loss")
            ad.backward(actor_loss)
            self.critics.zero_grad()
            self.actor_opt.step()
            for tgt, online in ((self.actor_t, self.actor), (self.q1_t, self.q1), (self.q2_t, self.q2)):
                polyak_update(tgt.params, online.params, cfg.tau)
        return critic_loss


def td3_train(ms: Sequence[Morphology], env_cfg: EnvConfig, cfg: Td3Config, net_cfg: GcntConfig,
              seed: int, total_steps: int, metrics_path=None, eval_seed: int | None = None) -> TrainResult:
    """Round-robin collection (one episode per morphology), then
    ``updates_per_episode`` TD3 updates per morphology, until ``total_steps``
    environment steps have been taken."""
    if not ms:
        raise ValueError("td3_train needs at least one morphology")
    rng = np.random.default_rng(seed)
    learner = Td3Learner(net_cfg, cfg, seed)
    buffers = {m.name: ReplayBuffer(m, net_cfg.obs_dim, net_cfg.action_dim, cfg.buffer_capacity) for m in ms}
    writer = MetricsWriter(metrics_path, ["critic_loss"])
    eval_seed = seed + 10_000 if eval_seed is None else eval_seed

    steps = 0
    next_eval = cfg.eval_interval
    losses: dict[str, list[float]] = {m.name: [] for m in ms}
    skipped = 0
    episode = 0

    def log_eval(at: int) -> None:
        report = evaluate(learner.actor, ms, env_cfg, cfg.eval_episodes, eval_seed)
        extras = {name: {"critic_loss": float(np.mean(v)) if v else float("nan")} for name, v in losses.items()}
        writer.write_report(at, report, extras)
        log.info("td3 step %d average return %.3f", at, report.average)
        for v in losses.values():
            v.clear()

    while steps < total_steps:
        for m in ms:
            explore = steps < cfg.initial_explore_steps
            state = reset(m, env_cfg, int(rng.integers(2**31)))
            obs = observe(state, m, env_cfg)
            morph = None
            if not explore:
                with ad.no_grad():
                    morph = learner.actor.morph_features(m)
            done = False
            while not done:
                if explore:
                    a = random_actions(rng, m)
                else:
                    a = actor_act(learner.actor, m, obs, "td3_explore", rng, cfg.explore_sigma, morph)["actions"][:, 0]
                state, r, done = step(state, a, m, env_cfg)
                obs2 = observe(state, m, env_cfg)
                # time-limit ends are truncations: keep bootstrapping through them
                buffers[m.name].add(obs, a, r, obs2, done, terminal=False)
                obs = obs2
                steps += 1
            episode += 1
        for m in ms:
            buf = buffers[m.name]
            for _ in range(cfg.updates_per_episode):
                if len(buf) == 0:
                    skipped += 1
                    continue
                losses[m.name].append(learner.update(m, buf, rng))
        if steps >= next_eval:
            log_eval(steps)
            next_eval = (steps // cfg.eval_interval + 1) * cfg.eval_interval
    if not writer.rows or writer.rows[-1]["step"] != steps:
        log_eval(steps)

    nets = {"actor": learner.actor, "q1": learner.q1, "q2": learner.q2}
    return TrainResult(nets, writer.rows, {"steps": steps, "episodes": episode,
                                           "updates": learner.iterations, "skipped_updates": skipped})
