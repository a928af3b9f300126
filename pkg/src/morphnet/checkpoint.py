"""Binary checkpoints.

Layout (little-endian)::

    b"GCNT" | u32 version | u32 n | n bytes of JSON config
    u32 count | count x (u16 len | name utf-8 | u8 ndim | ndim x u32 | fp64 data)

Values round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ParameterSet
from .policy import Gcnt, GcntConfig

MAGIC = b"GCNT"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint, or one that does not match the expected network."""


@dataclass
class Checkpoint:
    config: dict
    arrays: dict[str, np.ndarray]

    def network_config(self) -> GcntConfig:
        try:
            return GcntConfig.from_dict(self.config["network"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"bad network config in checkpoint: {e}") from e

    def prefix(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if k.startswith(prefix + ".")}


def save_checkpoint(path, config: dict, params: ParameterSet) -> None:
    blob = json.dumps(config, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(params))]
    for p in params:
        name = p.name.encode()
        data = np.asarray(p.data, dtype="<f8", order="C")  # keeps 0-d shapes
        out.append(struct.pack("<H", len(name)))
        out.append(name)
        out.append(struct.pack("<B", data.ndim))
        out.append(struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(data.tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = json.loads(r.take(n).decode())
    except ValueError as e:
        raise CheckpointError(f"{path}: corrupt config block: {e}") from e
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return Checkpoint(config, arrays)


def restore_network(ckpt: Checkpoint, prefix: str = "actor", out_dim: int | None = None) -> Gcnt:
    """Rebuild the network stored under ``prefix`` with its exact saved values."""
    cfg = ckpt.network_config()
    saved = ckpt.prefix(prefix)
    if not saved:
        raise CheckpointError(f"checkpoint has no parameters under {prefix!r}")
    if out_dim is None:
        out_dim = cfg.action_dim if prefix == "actor" else 1
    log_std = 0.0 if f"{prefix}.log_std" in saved else None
    if prefix != "actor":
        cfg_in = ckpt.config.get("critic_obs_dim")
        if cfg_in is not None:
            cfg = GcntConfig.from_dict({**cfg.to_dict(), "obs_dim": cfg_in})
    net = Gcnt(cfg, out_dim, prefix, log_std_init=log_std)
    names = set(net.params.names())
    if names != set(saved):
        missing = sorted(names - set(saved))[:3]
        extra = sorted(set(saved) - names)[:3]
        raise CheckpointError(f"parameter mismatch for {prefix!r}: missing {missing}, unexpected {extra}")
    for p in net.params:
        if p.data.shape != saved[p.name].shape:
            raise CheckpointError(f"{p.name}: shape {saved[p.name].shape} != expected {p.data.shape}")
        p.data = saved[p.name].copy()
    return net
