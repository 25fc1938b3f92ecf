import numpy as np
import pytest

from isacspike.checkpoint import (MAGIC, CheckpointError, checkpoint_config, load_checkpoint,
                                  read_checkpoint, save_checkpoint)
from isacspike.config import load_config
from isacspike.rl import Trainer

CFG = load_config(batch_size=64, minibatch=32, epochs=1, hidden=16)


def _trained(kind="spiking", iters=1):
    t = Trainer(CFG, kind, seed=3, record_wall_clock=False)
    for _ in range(iters):
        t.train_iteration()
    return t


@pytest.mark.parametrize("kind", ["spiking", "dense"])
def test_round_trip_continues_identically(tmp_path, kind):
    t = _trained(kind)
    path = save_checkpoint(tmp_path / "c.bin", t)
    assert path.read_bytes()[:8] == MAGIC
    r = load_checkpoint(path, CFG, record_wall_clock=False)
    assert r.iteration == 1 and r.agent.kind == kind
    for a, b in zip(t.agent.actor.params + t.agent.critic.params, r.agent.actor.params + r.agent.critic.params):
        assert np.array_equal(a, b)
    assert r.agent.actor_opt.t == t.agent.actor_opt.t
    assert t.train_iteration().to_dict() == r.train_iteration().to_dict()


def test_random_agent_round_trip(tmp_path):
    t = _trained("random")
    r = load_checkpoint(save_checkpoint(tmp_path / "c.bin", t))
    assert r.agent.kind == "random" and r.iteration == 1


def test_config_is_embedded(tmp_path):
    path = save_checkpoint(tmp_path / "c.bin", _trained())
    assert checkpoint_config(path) == CFG
    header, arrays = read_checkpoint(path)
    assert header["config_hash"] == CFG.config_hash()
    assert arrays["actor.0"].shape == (12, 16) and arrays["log_std"].shape == (6,)


def test_hash_mismatch_refused(tmp_path):
    path = save_checkpoint(tmp_path / "c.bin", _trained())
    with pytest.raises(CheckpointError, match="refusing"):
        load_checkpoint(path, CFG.replace(pmax_dbm=10.0))


def test_corruption_detected(tmp_path):
    path = save_checkpoint(tmp_path / "c.bin", _trained())
    blob = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"
    flipped = blob.copy()
    flipped[-20] ^= 0xFF
    bad.write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError, match="checksum"):
        read_checkpoint(bad)
    bad.write_bytes(bytes(blob[:-100]))
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
    bad.write_bytes(b"NOTACKPT" + bytes(blob[8:]))
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        read_checkpoint(bad)
    wrong_version = blob.copy()
    wrong_version[8] = 99
    bad.write_bytes(bytes(wrong_version))
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(bad)
    with pytest.raises(CheckpointError, match="not found"):
        read_checkpoint(tmp_path / "missing.bin")
