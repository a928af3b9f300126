import csv
import json

import numpy as np
import pytest

from morphnet import cli
from morphnet.autodiff import ParameterSet
from morphnet.checkpoint import CheckpointError, load_checkpoint, restore_network, save_checkpoint
from morphnet.config import ConfigError, ExperimentConfig, config_from_dict, dump_config, load_config
from morphnet.env import generate_family
from morphnet.graph import save_morphologies
from morphnet.policy import Gcnt, GcntConfig, actor_mean
from morphnet.trainers import evaluate

TINY = """
[experiment]
name = "{name}"
trainer = "{trainer}"
seeds = [0, 1]
total_steps = 120
eval_episodes = 2
eval_seed = 77

[morphologies]
family = "chain_walker"
train_sizes = [3, 4]
test_sizes = [5]
baseline_episodes = 4

[env]
episode_len = 20

[network]
model = 8
gcn_width = 4
gcn_layers = 2
wl_bins = 8
tf_layers = 1
tf_heads = 2
tf_feedforward = 12
d_max = 6

[td3]
batch = 16
initial_explore_steps = 40
eval_interval = 60

[ppo]
batch = 80
batch_divisor = 2
episodes_per_iter = 2
epochs = 2
warmup_iters = 1
eval_interval = 60
"""


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("MORPHNET_OUT", str(tmp_path / "out"))
    return tmp_path / "out"


def write_cfg(tmp_path, name="tiny", trainer="td3", extra=""):
    p = tmp_path / f"{name}.toml"
    p.write_text(TINY.format(name=name, trainer=trainer) + extra)
    return p


def small_net(**kw):
    cfg = GcntConfig(obs_dim=10, model=8, gcn_width=4, gcn_layers=2, wl_bins=8, tf_layers=1, tf_heads=2,
                     tf_feedforward=12, d_max=6, **kw)
    return Gcnt(cfg, 1, "actor", seed=3)


# --- checkpoint -----------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    net = small_net()
    path = tmp_path / "c.gcnt"
    save_checkpoint(path, {"network": net.cfg.to_dict(), "x": [1, 2]}, net.params)
    ck = load_checkpoint(path)
    assert ck.config["x"] == [1, 2]
    back = restore_network(ck)
    for p, q in zip(net.params, back.params):
        assert p.name == q.name and p.data.tobytes() == q.data.tobytes()
    m = generate_family("chain_walker", [4])[0]
    obs = np.random.default_rng(0).normal(size=(4, 10))
    assert actor_mean(net, m, obs).data.tobytes() == actor_mean(back, m, obs).data.tobytes()


def test_checkpoint_rejects_corruption(tmp_path):
    net = small_net()
    path = tmp_path / "c.gcnt"
    save_checkpoint(path, {"network": net.cfg.to_dict()}, net.params)
    raw = path.read_bytes()
    for name, data in (("trunc", raw[:-3]), ("trail", raw + b"\0"), ("magic", b"XXXX" + raw[4:]),
                       ("version", raw[:4] + b"\x09" + raw[5:])):
        bad = tmp_path / f"{name}.gcnt"
        bad.write_bytes(data)
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.gcnt")


def test_restore_rejects_mismatched_network(tmp_path):
    net = small_net()
    path = tmp_path / "c.gcnt"
    cfg = small_net(use_distance=False).cfg
    save_checkpoint(path, {"network": cfg.to_dict()}, net.params)
    with pytest.raises(CheckpointError):
        restore_network(load_checkpoint(path))
    with pytest.raises(CheckpointError):
        restore_network(load_checkpoint(path), prefix="q1")


def test_scalar_parameters_round_trip(tmp_path):
    ps = ParameterSet()
    ps.new("s", np.array(2.5))
    ps.new("e", np.zeros((0, 3)))
    save_checkpoint(tmp_path / "s.gcnt", {}, ps)
    arr = load_checkpoint(tmp_path / "s.gcnt").arrays
    assert arr["s"].shape == () and arr["s"] == 2.5 and arr["e"].shape == (0, 3)


# --- config -----------------------------------------------------------------


def test_config_defaults_and_round_trip(tmp_path):
    cfg = config_from_dict({})
    assert cfg == ExperimentConfig()
    text = dump_config(cfg)
    p = tmp_path / "c.toml"
    p.write_text(text)
    again = load_config(p)
    assert again == cfg and dump_config(again) == text


def test_config_snapshot_is_stable(tmp_path):
    cfg = load_config(write_cfg(tmp_path))
    assert cfg.experiment.seeds == (0, 1) and cfg.network["model"] == 8
    p = tmp_path / "snap.toml"
    p.write_text(dump_config(cfg))
    assert dump_config(load_config(p)) == p.read_text()


@pytest.mark.parametrize("raw", [
    {"bogus": {}},
    {"experiment": {"seedz": [1]}},
    {"experiment": {"trainer": "sac"}},
    {"experiment": {"seeds": []}},
    {"experiment": {"total_steps": "many"}},
    {"network": {"width": 3}},
    {"network": {"model": 10, "tf_heads": 3}},
    {"env": {"dt": -1.0}},
    {"morphologies": {"family": "blob"}},
    {"ppo": {"batch_divisor": 0}},
])
def test_config_errors(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_config_int_promotes_to_float():
    assert config_from_dict({"td3": {"tau": 1}}).td3.tau == 1.0


def test_ablated_names_and_flags():
    cfg = config_from_dict({})
    ab = cfg.ablated("wl")
    assert ab.experiment.name == "experiment_no_wl" and not ab.network_config().use_wl
    with pytest.raises(ConfigError):
        cfg.ablated("transformer")


# --- CLI --------------------------------------------------------------------


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_missing_config_exits_2(out, capsys):
    assert cli.main(["train", "/nonexistent.toml"]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_arguments_exit_2(out):
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["eval"]) == 2


def test_empty_training_set_exits_2(tmp_path, out):
    empty = tmp_path / "empty.json"
    save_morphologies([], empty)
    cfg = write_cfg(tmp_path, extra="")
    text = cfg.read_text().replace('family = "chain_walker"', f'train_file = "{empty.name}"')
    cfg.write_text(text)
    assert cli.main(["train", str(cfg)]) == 2


def test_overlapping_train_and_test_exits_2(tmp_path, out):
    cfg = write_cfg(tmp_path)
    cfg.write_text(cfg.read_text().replace("test_sizes = [5]", "test_sizes = [4]"))
    assert cli.main(["train", str(cfg)]) == 2


def test_unknown_ablation_module_exits_2(tmp_path, out):
    assert cli.main(["ablate", str(write_cfg(tmp_path)), "--module", "attention"]) == 2


def test_train_eval_zero_shot_export(tmp_path, out, capsys):
    assert cli.main(["train", str(write_cfg(tmp_path))]) == 0
    run = out / "runs" / "tiny"
    for seed in (0, 1):
        assert (run / f"seed_{seed}" / "checkpoint.gcnt").exists()
        assert (run / f"seed_{seed}" / "metrics.csv").exists()
    assert dump_config(load_config(run / "config.toml")) == (run / "config.toml").read_text()
    summary = rows(run / "summary.csv")
    assert [r["seed"] for r in summary] == ["0", "1"]

    # re-evaluating with the training eval seed reproduces the final metrics rows exactly
    ck = run / "seed_0" / "checkpoint.gcnt"
    assert cli.main(["eval", str(ck), "--morphs", "chain_walker:3,4", "--episodes", "2", "--seed", "77"]) == 0
    final = {r["morphology"]: r for r in rows(run / "seed_0" / "metrics.csv") if r["step"] == "120"}
    ev = rows(run / "seed_0" / "eval_seed77.csv")
    assert len(ev) == 2
    for r in ev:
        assert r["mean_return"] == final[r["morphology"]]["mean_return"]

    assert cli.main(["zero-shot", str(ck), "--morphs", "chain_walker:5", "--episodes", "3"]) == 0
    zs = rows(run / "seed_0" / "zero_shot_seed0.csv")
    baselines = json.loads((run / "baselines.json").read_text())
    assert [r["morphology"] for r in zs] == ["chain_walker_5"]
    assert float(zs[0]["random_baseline"]) == baselines["chain_walker_5"]
    assert float(zs[0]["ratio"]) == float(zs[0]["mean_return"]) / float(zs[0]["random_baseline"])
    # training morphologies are not a zero-shot set
    assert cli.main(["zero-shot", str(ck), "--morphs", "chain_walker:3"]) == 2

    emb = tmp_path / "emb.csv"
    assert cli.main(["export-embeddings", str(ck), "--morphs", "chain_walker:3,5", "--out", str(emb)]) == 0
    assert len(rows(emb)) == 8
    assert cli.main(["eval", str(ck), "--morphs", "nowhere.json"]) == 2
    assert cli.main(["eval", str(tmp_path / "nope.gcnt"), "--morphs", "chain_walker:3"]) == 2
    assert cli.main(["eval", str(ck), "--morphs", "chain_walker:3", "--episodes", "0"]) == 2


def test_checkpoint_reproduces_in_process(tmp_path, out):
    cfg = load_config(write_cfg(tmp_path, trainer="ppo"))
    run = cli.train_experiment(cfg)
    _, env, net = cli.load_policy(run / "seed_1" / "checkpoint.gcnt")
    assert net.log_std is not None
    rep = evaluate(net, cfg.train_morphologies(), env, 2, 77)
    last = rows(run / "seed_1" / "metrics.csv")[-1]
    assert last["morphology"] == "ALL" and float(last["mean_return"]) == rep.average


def test_ablate_dist_drops_distance_parameters(tmp_path, out):
    assert cli.main(["ablate", str(write_cfg(tmp_path)), "--module", "dist"]) == 0
    comp = rows(out / "runs" / "tiny_no_dist" / "comparison.csv")
    assert [r["run"] for r in comp] == ["full", "full", "no_dist", "no_dist"]
    full_n = int(comp[0]["actor_parameters"])
    abl_n = int(comp[2]["actor_parameters"])
    assert abl_n < full_n
    ck = load_checkpoint(out / "runs" / "tiny_no_dist" / "seed_0" / "checkpoint.gcnt")
    assert not any("distance" in k for k in ck.arrays)
    full = load_checkpoint(out / "runs" / "tiny" / "seed_0" / "checkpoint.gcnt")
    assert any("distance" in k for k in full.arrays)


def test_divergence_exits_3(tmp_path, out, monkeypatch):
    from morphnet.trainers.common import TrainingDivergence

    def diverge(*a, **k):
        raise TrainingDivergence("non-finite critic loss: nan")

    monkeypatch.setattr(cli, "td3_train", diverge)
    assert cli.main(["train", str(write_cfg(tmp_path))]) == 3


def test_module_entry_point_help():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "morphnet", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "zero-shot" in r.stdout


def test_shipped_configs_load():
    from pathlib import Path
    paths = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.toml"))
    assert len(paths) >= 4
    names = set()
    for p in paths:
        cfg = load_config(p)
        names.add(cfg.experiment.name)
        assert cfg.experiment.seeds == (0, 1, 2)
    assert len(names) == len(paths)
    kls = {load_config(p).ppo.early_stop_kl for p in paths if load_config(p).experiment.trainer == "ppo"}
    assert kls == {0.03, 0.05}
