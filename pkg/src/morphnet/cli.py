"""``morphnet`` command line: train, eval, zero-shot, ablate, export-embeddings.

Exit codes: 0 success, 2 usage or configuration error, 3 training divergence.
Run directories live under ``$MORPHNET_OUT`` (default: the current directory).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .autodiff import ParameterSet
from .checkpoint import CheckpointError, load_checkpoint, restore_network, save_checkpoint
from .config import (ConfigError, ExperimentConfig, check_disjoint, config_to_dict, dump_config,
                     load_config)
from .env import FAMILIES, EnvConfig, generate_family
from .graph import Morphology, MorphologyError, from_dict, load_morphologies, to_dict
from .policy import export_embeddings
from .trainers.common import EvalReport, TrainingDivergence, evaluate, random_policy_report
from .trainers.ppo import ppo_train
from .trainers.td3 import critic_config, td3_train

log = logging.getLogger("morphnet")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


class UsageError(Exception):
    pass


def out_root() -> Path:
    return Path(os.environ.get("MORPHNET_OUT", "."))


def run_dir(cfg: ExperimentConfig) -> Path:
    return out_root() / cfg.experiment.output / cfg.experiment.name


# ---------------------------------------------------------------------------
# helpers


def resolve_paths(cfg: ExperimentConfig, base: Path) -> ExperimentConfig:
    """Make morphology file paths absolute so the snapshot is self-contained."""
    m = cfg.morphologies
    fix = {k: str((base / getattr(m, k)).resolve()) for k in ("train_file", "test_file") if getattr(m, k)}
    return dataclasses.replace(cfg, morphologies=dataclasses.replace(m, **fix)) if fix else cfg


def parse_morphs(arg: str) -> list[Morphology]:
    """A morphology list file, or ``family:size[,size...]`` for a generated set."""
    p = Path(arg)
    if p.exists():
        ms = load_morphologies(p)
    elif ":" in arg and arg.split(":", 1)[0] in FAMILIES:
        family, sizes = arg.split(":", 1)
        try:
            ms = generate_family(family, [int(s) for s in sizes.split(",")], variants=False)
        except ValueError as e:
            raise UsageError(f"bad morphology spec {arg!r}: {e}") from e
    else:
        raise UsageError(f"morphology file not found: {arg}")
    if not ms:
        raise UsageError("empty morphology set")
    return ms


def compute_baselines(ms, env_cfg: EnvConfig, episodes: int) -> dict[str, float]:
    report = random_policy_report(ms, env_cfg, episodes, seed=0)
    return {r.name: r.mean_return for r in report.per_morph}


def format_report(report: EvalReport, baselines: dict[str, float] | None = None) -> str:
    head = f"{'morphology':<28} {'mean':>12} {'stderr':>10}"
    if baselines is not None:
        head += f" {'random':>10} {'ratio':>8}"
    lines = [head]
    for r in report.per_morph:
        line = f"{r.name:<28} {r.mean_return:>12.3f} {r.stderr:>10.3f}"
        if baselines is not None:
            b = baselines[r.name]
            line += f" {b:>10.3f} {r.mean_return / b:>8.3f}"
        lines.append(line)
    lines.append(f"{'average':<28} {report.average:>12.3f}")
    return "\n".join(lines)


def write_report_csv(path: Path, report: EvalReport, baselines: dict[str, float] | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["morphology", "mean_return", "stderr", "episode_len"]
    if baselines is not None:
        cols += ["random_baseline", "ratio"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in report.per_morph:
            row = [r.name, repr(r.mean_return), repr(r.stderr), repr(r.episode_len)]
            if baselines is not None:
                b = baselines[r.name]
                row += [repr(b), repr(r.mean_return / b)]
            w.writerow(row)


# ---------------------------------------------------------------------------
# commands


def train_experiment(cfg: ExperimentConfig) -> Path:
    """Train every seed of ``cfg``; returns the run directory."""
    train = cfg.train_morphologies()
    test = cfg.test_morphologies()
    if not train:
        raise ConfigError("empty training morphology set")
    check_disjoint(train, test)
    out = run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(cfg))
    baselines = compute_baselines(train + test, cfg.env, cfg.morphologies.baseline_episodes)
    (out / "baselines.json").write_text(json.dumps(baselines, indent=2, sort_keys=True) + "\n")

    net_cfg = cfg.network_config()
    exp = cfg.experiment
    summary = []
    for seed in exp.seeds:
        sdir = out / f"seed_{seed}"
        sdir.mkdir(exist_ok=True)
        log.info("training %s seed %d (%s, %d steps)", exp.name, seed, exp.trainer, exp.total_steps)
        if exp.trainer == "td3":
            tcfg = dataclasses.replace(cfg.td3, eval_episodes=exp.eval_episodes)
            res = td3_train(train, cfg.env, tcfg, net_cfg, seed, exp.total_steps,
                            metrics_path=sdir / "metrics.csv", eval_seed=exp.eval_seed)
            critic_in = critic_config(net_cfg).obs_dim
        else:
            pcfg = dataclasses.replace(cfg.ppo, eval_episodes=exp.eval_episodes)
            res = ppo_train(train, cfg.env, pcfg, net_cfg, seed, exp.total_steps,
                            metrics_path=sdir / "metrics.csv", eval_seed=exp.eval_seed)
            critic_in = net_cfg.obs_dim
        params = ParameterSet([p for net in res.networks.values() for p in net.params])
        meta = {
            "trainer": exp.trainer,
            "seed": seed,
            "network": net_cfg.to_dict(),
            "critic_obs_dim": critic_in,
            "env": config_to_dict(cfg)["env"],
            "eval_seed": exp.eval_seed,
            "eval_episodes": exp.eval_episodes,
            "train_morphologies": [to_dict(m) for m in train],
            "baselines": baselines,
            "info": res.info,
        }
        save_checkpoint(sdir / "checkpoint.gcnt", meta, params)
        final = res.metrics[-1]
        summary.append({"seed": seed, "final_average_return": final["mean_return"],
                        "actor_parameters": res.actor.params.count()})
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["seed", "final_average_return", "actor_parameters"])
        w.writeheader()
        for row in summary:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return out


def env_from_checkpoint(meta: dict) -> EnvConfig:
    env = meta.get("env", {})
    try:
        return EnvConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in env.items()})
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"bad env config in checkpoint: {e}") from e


def load_policy(path):
    ckpt = load_checkpoint(path)
    env = env_from_checkpoint(ckpt.config)
    net = restore_network(ckpt, "actor")
    if net.cfg.obs_dim != env.obs_dim():
        raise CheckpointError(f"checkpoint network expects obs_dim {net.cfg.obs_dim}, "
                              f"environment produces {env.obs_dim()}")
    return ckpt, env, net


def check_types(ms, num_types: int) -> None:
    for m in ms:
        bad = [t for t in m.limb_types if t >= num_types]
        if bad:
            raise UsageError(f"{m.name}: limb type {bad[0]} outside the checkpoint's {num_types} types")


def cmd_train(args) -> int:
    cfg = resolve_paths(load_config(args.config), Path(args.config).parent)
    print(run_dir(cfg))
    train_experiment(cfg)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt, env, net = load_policy(args.checkpoint)
    ms = parse_morphs(args.morphs)
    check_types(ms, net.cfg.num_types)
    report = evaluate(net, ms, env, args.episodes, args.seed)
    print(format_report(report))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"eval_seed{args.seed}.csv"
    write_report_csv(out, report)
    return EXIT_OK


def cmd_zero_shot(args) -> int:
    ckpt, env, net = load_policy(args.checkpoint)
    ms = parse_morphs(args.morphs)
    check_types(ms, net.cfg.num_types)
    train = [from_dict(d) for d in ckpt.config.get("train_morphologies", [])]
    check_disjoint(train, ms)
    stored = ckpt.config.get("baselines", {})
    missing = [m for m in ms if m.name not in stored]
    baselines = dict(stored)
    if missing:
        baselines.update(compute_baselines(missing, env, 20))
    report = evaluate(net, ms, env, args.episodes, args.seed)
    print(format_report(report, baselines))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"zero_shot_seed{args.seed}.csv"
    write_report_csv(out, report, baselines)
    return EXIT_OK


def read_summary(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_ablate(args) -> int:
    base = resolve_paths(load_config(args.config), Path(args.config).parent)
    ablated = base.ablated(args.module)
    full_dir = run_dir(base)
    if not (full_dir / "summary.csv").exists():
        train_experiment(base)
    abl_dir = train_experiment(ablated)
    rows = []
    for label, d in (("full", full_dir), (f"no_{args.module}", abl_dir)):
        for r in read_summary(d / "summary.csv"):
            rows.append({"run": label, **r})
    with open(abl_dir / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["run", "seed", "final_average_return", "actor_parameters"])
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['run']:<12} seed {r['seed']:>3} {float(r['final_average_return']):>12.3f} "
              f"params {r['actor_parameters']}")
    print(abl_dir)
    return EXIT_OK


def cmd_export(args) -> int:
    ckpt, env, net = load_policy(args.checkpoint)
    ms = parse_morphs(args.morphs)
    check_types(ms, net.cfg.num_types)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    n = export_embeddings(ms, net, args.out)
    print(f"wrote {n} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="morphnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every seed of a config")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "evaluate a checkpoint"),
                              ("zero-shot", cmd_zero_shot, "evaluate on held-out morphologies")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("checkpoint")
        e.add_argument("--morphs", required=True, help="morphology list file or family:size,...")
        e.add_argument("--episodes", type=int, default=10)
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--out", help="report CSV (default: next to the checkpoint)")
        e.set_defaults(func=func)

    a = sub.add_parser("ablate", help="train with one module removed and compare")
    a.add_argument("config")
    a.add_argument("--module", required=True, help="gcn, wl or dist")
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-embeddings", help="write per-node morphology features")
    x.add_argument("checkpoint")
    x.add_argument("--morphs", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "episodes", 1) < 1:
        print("morphnet: error: --episodes must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError, MorphologyError) as e:
        print(f"morphnet: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as e:
        print(f"morphnet: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
