"""Joint multi-morphology PPO with a shared on-policy buffer.

Each iteration samples morphologies by their sampling probabilities, collects
whole episodes (copies of the same morphology run in lockstep), computes GAE
advantages and runs clipped-surrogate epochs with KL early stopping.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Adam, ParameterSet, Tensor
from ..env import EnvBatch, EnvConfig
from ..graph import Morphology
from ..policy import Gcnt, GcntConfig, actor_act, critic_value, ppo_log_prob
from .common import MetricsWriter, check_finite, evaluate, gae_advantages, sampling_prob_update
from .td3 import TrainResult

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 8
    batch: int = 5120
    batch_divisor: int = 1
    episodes_per_iter: int = 32
    clip: float = 0.2
    value_coef: float = 0.2
    early_stop_kl: float = 0.05
    warmup_iters: int = 5
    lr: float = 3e-4
    grad_clip: float = 0.5
    log_std_init: float = -0.5
    sampling_floor: float = 1e-3
    eval_interval: int = 10_000
    eval_episodes: int = 5

    def __post_init__(self):
        if self.batch_divisor < 1 or self.batch < self.batch_divisor:
            raise ValueError("batch_divisor must be in [1, batch]")
        if self.epochs < 1 or self.episodes_per_iter < 1:
            raise ValueError("epochs and episodes_per_iter must be positive")

    @property
    def minibatch(self) -> int:
        return self.batch // self.batch_divisor


def lr_schedule(base: float, iteration: int, warmup: int, total: int) -> float:
    """Linear warmup over ``warmup`` iterations, then cosine decay to 0 at ``total``."""
    if iteration < warmup:
        return base * (iteration + 1) / warmup
    span = max(1, total - warmup)
    frac = min(1.0, (iteration - warmup) / span)
    return base * 0.5 * (1.0 + math.cos(math.pi * frac))


def approx_kl(logp_new: np.ndarray, logp_old: np.ndarray) -> float:
    """Mean of (r - 1) - log r with r = exp(new - old); nonnegative, 0 iff r = 1."""
    log_r = np.asarray(logp_new) - np.asarray(logp_old)
    return float(np.mean(np.expm1(log_r) - log_r))


def clipped_surrogate(logp: Tensor, logp_old: np.ndarray, adv: np.ndarray, clip: float) -> Tensor:
    """-mean(min(r A, clip(r, 1 - eps, 1 + eps) A)) for a batch of samples."""
    ratio = ad.exp(logp - ad.constant(logp_old))
    A = ad.constant(adv)
    return -ad.mean_all(ad.minimum(ratio * A, ad.clamp(ratio, 1.0 - clip, 1.0 + clip) * A))


@dataclass
class RolloutGroup:
    """On-policy samples of one morphology from one iteration, flattened over time."""
    m: Morphology
    obs: np.ndarray       # (N, K, obs_dim)
    u: np.ndarray         # (N, K, action_dim) pre-squash samples
    logp: np.ndarray      # (N,)
    adv: np.ndarray       # (N,)
    returns: np.ndarray   # (N,)
    episodes: int
    episode_len: float

    def __len__(self) -> int:
        return len(self.logp)


class PpoLearner:
    def __init__(self, net_cfg: GcntConfig, cfg: PpoConfig, seed: int):
        self.cfg = cfg
        self.actor = Gcnt(net_cfg, net_cfg.action_dim, "actor", seed=seed, log_std_init=cfg.log_std_init)
        self.critic = Gcnt(net_cfg, 1, "v", seed=seed + 1)
        self.params = ParameterSet(list(self.actor.params) + list(self.critic.params))
        self.opt = Adam(self.params, lr=cfg.lr, grad_clip=cfg.grad_clip)

    def collect(self, m: Morphology, env_cfg: EnvConfig, copies: int, rng: np.random.Generator) -> RolloutGroup:
        seeds = rng.integers(2**31, size=copies)
        batch = EnvBatch(m, env_cfg, seeds)
        with ad.no_grad():
            morph = self.actor.morph_features(m)
        obs, us, logps, rewards = [], [], [], []
        done = False
        while not done:
            o = batch.observe()
            out = actor_act(self.actor, m, o, "ppo_sample", rng, morph=morph)
            r, done = batch.step(out["actions"][..., 0])
            obs.append(o)
            us.append(out["u"])
            logps.append(out["logp"])
            rewards.append(r)
        T = len(obs)
        obs_arr = np.stack(obs, axis=1)  # (copies, T, K, d)
        with ad.no_grad():
            values = critic_value(self.critic, m, obs_arr).data               # (copies, T)
            # the episode ends on the time limit: bootstrap from the final state
            last = critic_value(self.critic, m, batch.observe()).data         # (copies,)
        rew = np.stack(rewards, axis=1)
        adv = np.zeros((copies, T))
        ret = np.zeros((copies, T))
        for i in range(copies):
            adv[i], ret[i] = gae_advantages(rew[i], np.append(values[i], last[i]), np.zeros(T),
                                            self.cfg.gamma, self.cfg.lam)
        K = m.num_nodes
        return RolloutGroup(
            m=m,
            obs=obs_arr.reshape(copies * T, K, -1),
            u=np.stack(us, axis=1).reshape(copies * T, K, -1),
            logp=np.stack(logps, axis=1).reshape(-1),
            adv=adv.reshape(-1),
            returns=ret.reshape(-1),
            episodes=copies,
            episode_len=float(T),
        )

    def minibatch_loss(self, parts: list[tuple[RolloutGroup, np.ndarray]], adv_norm: tuple[float, float]):
        """Loss over a minibatch made of per-morphology index sets, weighted by size.

        Returns (loss, approx_kl, clip_fraction).
        """
        cfg = self.cfg
        total = sum(len(idx) for _, idx in parts)
        mu, sd = adv_norm
        loss = None
        kls, clipped = 0.0, 0.0
        for g, idx in parts:
            adv = (g.adv[idx] - mu) / sd
            logp = ppo_log_prob(self.actor, g.m, g.obs[idx], g.u[idx])
            pol = clipped_surrogate(logp, g.logp[idx], adv, cfg.clip)
            v = critic_value(self.critic, g.m, g.obs[idx])
            val = ad.mean_all(ad.square(v - ad.constant(g.returns[idx])))
            part = (pol + val * cfg.value_coef) * (len(idx) / total)
            loss = part if loss is None else loss + part
            log_r = logp.data - g.logp[idx]
            kls += approx_kl(logp.data, g.logp[idx]) * len(idx)
            clipped += float(np.count_nonzero(np.abs(np.exp(log_r) - 1.0) > cfg.clip))
        return loss, kls / total, clipped / total

    def update(self, groups: list[RolloutGroup], rng: np.random.Generator) -> dict:
        """Run the epochs of one iteration; returns diagnostics."""
        cfg = self.cfg
        all_adv = np.concatenate([g.adv for g in groups])
        adv_norm = (float(all_adv.mean()), float(all_adv.std()) + 1e-8)
        index = np.concatenate([np.stack([np.full(len(g), gi), np.arange(len(g))], axis=1)
                                for gi, g in enumerate(groups)])
        n = len(index)
        mb = min(cfg.minibatch, n)
        kls, fracs = [], []
        stopped = False
        first = True
        for _ in range(cfg.epochs):
            order = index[rng.permutation(n)]
            for start in range(0, n, mb):
                chunk = order[start:start + mb]
                parts = []
                for gi in np.unique(chunk[:, 0]):
                    parts.append((groups[gi], np.sort(chunk[chunk[:, 0] == gi, 1])))
                loss, kl, frac = self.minibatch_loss(parts, adv_norm)
                # the first minibatch always steps: its ratio is 1 by construction
                if not first and kl > cfg.early_stop_kl:
                    stopped = True
                    self.params.zero_grad()
                    break
                check_finite(loss.item(), "ppo loss")
                ad.backward(loss)
                self.opt.step()
                kls.append(kl)
                fracs.append(frac)
                first = False
            if stopped:
                break
        return {"kl": float(np.mean(kls)), "clip_frac": float(np.mean(fracs)),
                "early_stop": stopped, "minibatches": len(kls)}


def ppo_train(ms: Sequence[Morphology], env_cfg: EnvConfig, cfg: PpoConfig, net_cfg: GcntConfig,
              seed: int, total_steps: int, metrics_path=None, eval_seed: int | None = None) -> TrainResult:
    if not ms:
        raise ValueError("ppo_train needs at least one morphology")
    rng = np.random.default_rng(seed)
    learner = PpoLearner(net_cfg, cfg, seed)
    writer = MetricsWriter(metrics_path, ["kl", "clip_frac", "early_stops"])
    eval_seed = seed + 10_000 if eval_seed is None else eval_seed

    n_iters = max(1, math.ceil(total_steps / (cfg.episodes_per_iter * env_cfg.episode_len)))
    probs = np.full(len(ms), 1.0 / len(ms))
    lens_since: list[list[float]] = [[] for _ in ms]
    window: list[dict] = []
    early_stops = 0
    steps = 0
    next_eval = cfg.eval_interval

    def log_eval(at: int) -> None:
        report = evaluate(learner.actor, ms, env_cfg, cfg.eval_episodes, eval_seed)
        stats = {"kl": float(np.mean([w["kl"] for w in window])) if window else float("nan"),
                 "clip_frac": float(np.mean([w["clip_frac"] for w in window])) if window else float("nan"),
                 "early_stops": early_stops}
        writer.write_report(at, report, {name: stats for name in [m.name for m in ms] + ["ALL"]})
        log.info("ppo step %d average return %.3f (early stops %d)", at, report.average, early_stops)
        window.clear()

    it = 0
    while steps < total_steps:
        learner.opt.lr = lr_schedule(cfg.lr, it, cfg.warmup_iters, n_iters)
        picks = rng.choice(len(ms), size=cfg.episodes_per_iter, p=probs)
        groups = []
        for mi in np.unique(picks):
            g = learner.collect(ms[mi], env_cfg, int(np.count_nonzero(picks == mi)), rng)
            groups.append(g)
            lens_since[mi].extend([g.episode_len] * g.episodes)
            steps += len(g)
        stats = learner.update(groups, rng)
        early_stops += int(stats["early_stop"])
        window.append(stats)
        it += 1
        if it >= cfg.warmup_iters and all(lens_since):
            probs = sampling_prob_update([np.mean(x) for x in lens_since], env_cfg.episode_len,
                                         cfg.sampling_floor)
            lens_since = [[] for _ in ms]
        if steps >= next_eval:
            log_eval(steps)
            next_eval = (steps // cfg.eval_interval + 1) * cfg.eval_interval
    if not writer.rows or writer.rows[-1]["step"] != steps:
        log_eval(steps)

    nets = {"actor": learner.actor, "v": learner.critic}
    return TrainResult(nets, writer.rows, {"steps": steps, "iterations": it, "early_stops": early_stops,
                                           "sampling_probs": probs.tolist()})
