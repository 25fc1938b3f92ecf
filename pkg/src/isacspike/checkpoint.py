"""Versioned binary checkpoints for a training run.

Layout (all integers little-endian):

    magic      8 bytes   b"ISPKCKPT"
    version    uint32    FORMAT_VERSION
    hlen       uint32    byte length of the header
    header     hlen bytes, UTF-8 JSON (config, hash, array table, counters, rng state)
    payload    float64 little-endian arrays, concatenated in header["arrays"] order
    crc        uint32    zlib.crc32 of the payload

See docs/checkpoint_format.md for the header fields.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, parse_config

MAGIC = b"ISPKCKPT"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _named_arrays(trainer) -> list[tuple[str, np.ndarray]]:
    agent = trainer.agent
    out = []
    if agent.actor is None:
        return out
    for i, p in enumerate(agent.actor.params):
        out.append((f"actor.{i}", p))
    out.append(("log_std", agent.log_std))
    for i, p in enumerate(agent.critic.params):
        out.append((f"critic.{i}", p))
    for tag, opt in (("actor", agent.actor_opt), ("critic", agent.critic_opt), ("std", agent.std_opt)):
        for i, a in enumerate(opt.m):
            out.append((f"adam.{tag}.m.{i}", a))
        for i, a in enumerate(opt.v):
            out.append((f"adam.{tag}.v.{i}", a))
    return out


def save_checkpoint(path, trainer) -> Path:
    """Write ``trainer`` to ``path`` atomically (temp file + rename)."""
    path = Path(path)
    agent = trainer.agent
    arrays = _named_arrays(trainer)
    opt_state = {}
    if agent.actor is not None:
        for tag, opt in (("actor", agent.actor_opt), ("critic", agent.critic_opt),
                         ("std", agent.std_opt)):
            opt_state[tag] = {"t": opt.t, "skipped": opt.skipped}
    header = {
        "config_hash": trainer.cfg.config_hash(),
        "config": trainer.cfg.to_ini(),
        "agent_kind": agent.kind,
        "seed": trainer.seed,
        "iteration": trainer.iteration,
        "reward_history": [h.mean_reward for h in trainer.history],
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "optimizer": opt_state,
        "rng_state": trainer.rng.bit_generator.state,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    blob = (MAGIC + struct.pack("<II", FORMAT_VERSION, len(hbytes)) + hbytes + payload
            + struct.pack("<I", zlib.crc32(payload)))
    tmp = path.with_name(path.name + ".tmp")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return path


def read_checkpoint(path):
    """Returns (header dict, {name: array})."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(blob[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = blob[16 + hlen:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    arrays, off = {}, 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 8
        if off + n > len(payload):
            raise CheckpointError(f"{path}: truncated payload")
        arrays[entry["name"]] = np.frombuffer(payload[off:off + n], dtype="<f8").reshape(shape).copy()
        off += n
    if off != len(payload):
        raise CheckpointError(f"{path}: payload size does not match the array table")
    return header, arrays


def checkpoint_config(path) -> ScenarioConfig:
    header, _ = read_checkpoint(path)
    return parse_config(header["config"])


def load_checkpoint(path, cfg: ScenarioConfig | None = None, record_wall_clock: bool = True):
    """Rebuild a Trainer. If ``cfg`` is given its hash must match the checkpoint's."""
    from .rl import IterationReport, Trainer

    header, arrays = read_checkpoint(path)
    stored = parse_config(header["config"])
    if stored.config_hash() != header["config_hash"]:
        raise CheckpointError(f"{path}: embedded config does not match its hash")
    if cfg is not None and cfg.config_hash() != header["config_hash"]:
        raise CheckpointError(
            f"config hash {cfg.config_hash()} differs from checkpoint {header['config_hash']}; "
            "refusing to resume")
    trainer = Trainer(cfg if cfg is not None else stored, header["agent_kind"], seed=header["seed"],
                      record_wall_clock=record_wall_clock)
    named = dict(_named_arrays(trainer))
    if set(named) != set(arrays):
        raise CheckpointError(f"{path}: array table does not match the network layout")
    for name, target in named.items():
        if target.shape != arrays[name].shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        target[...] = arrays[name]
    agent = trainer.agent
    for tag, opt in (("actor", agent.actor_opt), ("critic", agent.critic_opt), ("std", agent.std_opt)):
        if opt is not None:
            opt.t = header["optimizer"][tag]["t"]
            opt.skipped = header["optimizer"][tag]["skipped"]
    trainer.rng.bit_generator.state = header["rng_state"]
    trainer.iteration = header["iteration"]
    trainer.history = [IterationReport(i + 1, r, 0.0, 0.0, [], 0.0, 0.0)
                       for i, r in enumerate(header["reward_history"])]
    return trainer
