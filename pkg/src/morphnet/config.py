"""Experiment configuration files.

A config is TOML with the sections ``experiment``, ``morphologies``, ``env``,
``network``, ``td3`` and ``ppo``. Every omitted key takes its default, and
:func:`dump_config` writes the fully resolved result, so a snapshot alone is
enough to re-run an experiment.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .env import FAMILIES, EnvConfig, generate_family
from .graph import Morphology, MorphologyError, load_morphologies, to_dict
from .policy import GcntConfig
from .trainers.ppo import PpoConfig
from .trainers.td3 import Td3Config

TRAINERS = ("td3", "ppo")
ABLATION_FLAGS = {"gcn": "use_gcn", "wl": "use_wl", "dist": "use_distance"}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentSection:
    name: str = "experiment"
    trainer: str = "td3"
    seeds: tuple[int, ...] = (0,)
    total_steps: int = 50_000
    eval_episodes: int = 10
    eval_seed: int = 12_345
    output: str = "runs"


@dataclass(frozen=True)
class MorphologySection:
    """Either a generated family (``family`` + sizes) or explicit morphology files."""
    family: str = "chain_walker"
    family_seed: int = 0
    variants: bool = False
    train_sizes: tuple[int, ...] = (3, 4, 5)
    test_sizes: tuple[int, ...] = ()
    train_file: str = ""
    test_file: str = ""
    baseline_episodes: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    morphologies: MorphologySection = field(default_factory=MorphologySection)
    env: EnvConfig = field(default_factory=EnvConfig)
    network: dict = field(default_factory=lambda: default_network())  # GcntConfig fields except obs_dim
    td3: Td3Config = field(default_factory=Td3Config)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def network_config(self) -> GcntConfig:
        return GcntConfig(obs_dim=self.env.obs_dim(), **self.network)

    def trainer_config(self):
        return self.td3 if self.experiment.trainer == "td3" else self.ppo

    def train_morphologies(self, base: Path | None = None) -> list[Morphology]:
        return _morphs(self.morphologies, "train", base)

    def test_morphologies(self, base: Path | None = None) -> list[Morphology]:
        return _morphs(self.morphologies, "test", base)

    def ablated(self, module: str) -> ExperimentConfig:
        if module not in ABLATION_FLAGS:
            raise ConfigError(f"unknown ablation module {module!r}; expected one of {sorted(ABLATION_FLAGS)}")
        net = {**self.network, ABLATION_FLAGS[module]: False}
        exp = dataclasses.replace(self.experiment, name=f"{self.experiment.name}_no_{module}")
        return dataclasses.replace(self, network=net, experiment=exp)


_SECTIONS = {
    "experiment": ExperimentSection,
    "morphologies": MorphologySection,
    "env": EnvConfig,
    "td3": Td3Config,
    "ppo": PpoConfig,
}
_NETWORK_KEYS = [f.name for f in dataclasses.fields(GcntConfig) if f.name != "obs_dim"]


def default_network() -> dict:
    return {f.name: f.default for f in dataclasses.fields(GcntConfig) if f.name != "obs_dim"}


def _coerce(cls, section: str, values: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {unknown}")
    out = {}
    for k, v in values.items():
        default = getattr(cls(), k)
        if isinstance(default, tuple):
            if not isinstance(v, list):
                raise ConfigError(f"[{section}] {k} must be a list")
            v = tuple(v)
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"[{section}] {k} must be true or false")
        elif isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        elif type(default) is not type(v):
            raise ConfigError(f"[{section}] {k} must be {type(default).__name__}, got {v!r}")
        out[k] = v
    try:
        return cls(**out)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}") from e


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(_SECTIONS) - {"network"})
    if unknown:
        raise ConfigError(f"unknown sections: {unknown}")
    parts = {name: _coerce(cls, name, raw.get(name, {})) for name, cls in _SECTIONS.items()}
    net = dict(raw.get("network", {}))
    bad = sorted(set(net) - set(_NETWORK_KEYS))
    if bad:
        raise ConfigError(f"[network] unknown keys: {bad}")
    cfg = ExperimentConfig(network={**default_network(), **net}, **parts)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    e, m = cfg.experiment, cfg.morphologies
    if e.trainer not in TRAINERS:
        raise ConfigError(f"trainer must be one of {TRAINERS}, got {e.trainer!r}")
    if not e.seeds:
        raise ConfigError("at least one seed is required")
    if e.total_steps < 1 or e.eval_episodes < 1:
        raise ConfigError("total_steps and eval_episodes must be positive")
    if not m.train_file and m.family not in FAMILIES:
        raise ConfigError(f"unknown family {m.family!r}; expected one of {FAMILIES}")
    try:
        cfg.network_config()
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[network] {err}") from err


def _morphs(sec: MorphologySection, which: str, base: Path | None) -> list[Morphology]:
    path = sec.train_file if which == "train" else sec.test_file
    try:
        if path:
            p = Path(path)
            if base is not None and not p.is_absolute():
                p = base / p
            return load_morphologies(p)
        sizes = sec.train_sizes if which == "train" else sec.test_sizes
        if not sizes:
            return []
        return generate_family(sec.family, sizes, sec.family_seed, sec.variants)
    except (OSError, MorphologyError, ValueError) as err:
        raise ConfigError(f"cannot build {which} morphologies: {err}") from err


def check_disjoint(train: list[Morphology], test: list[Morphology]) -> None:
    """Raise if any test morphology appears in the training set (by name or by structure)."""
    names = {m.name for m in train}
    shapes = {_structure(m) for m in train}
    clash = [m.name for m in test if m.name in names or _structure(m) in shapes]
    if clash:
        raise ConfigError(f"test morphologies overlap the training set: {clash}")


def _structure(m: Morphology) -> tuple:
    d = to_dict(m)
    return d["num_nodes"], d["root"], tuple(d["limb_types"]), tuple(map(tuple, d["edges"]))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for name in ("experiment", "morphologies", "env"):
        out[name] = _plain(dataclasses.asdict(getattr(cfg, name)))
    net = cfg.network_config().to_dict()
    del net["obs_dim"]
    out["network"] = net
    out["td3"] = _plain(dataclasses.asdict(cfg.td3))
    out["ppo"] = _plain(dataclasses.asdict(cfg.ppo))
    return out


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))
