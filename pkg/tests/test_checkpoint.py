import struct

import pytest
import torch

from rfsr.checkpoint import (ChecksumError, CheckpointError, DigestError, VersionError, dumps, load_checkpoint,
                             load_meta, loads, net_digest, save_checkpoint)
from rfsr.degrade import DegradeConfig, make_corpus, stack_pairs
from rfsr.distill import TrainConfig, consistency_step, init_state, start_consistency, step_rng
from rfsr.nets import NetConfig

CFG = NetConfig(base_channels=4, time_embed_dim=8, disc_channels=4)


def consistency_state():
    tc = TrainConfig(stage="consistency", batch=4)
    state = start_consistency(init_state(CFG, 3), tc)
    b = stack_pairs(make_corpus(0, 4, 16, DegradeConfig()))
    consistency_step(state, b, tc, *step_rng(0, "consistency", 0))
    return state


def test_fresh_state_round_trip(tmp_path):
    state = init_state(CFG, 1)
    p = save_checkpoint(state, tmp_path / "a.ckpt", "[train]\nseed = 1\n")
    back = load_checkpoint(p, CFG)
    assert all(torch.equal(a, b) for a, b in zip(state.theta.parameters(), back.theta.parameters()))
    assert save_checkpoint(back, tmp_path / "b.ckpt", "[train]\nseed = 1\n").read_bytes() == p.read_bytes()


def test_full_state_round_trip_bytes():
    state = consistency_state()
    buf = dumps(state, "cfg")
    back, meta = loads(buf, CFG)
    assert dumps(back, "cfg") == buf
    assert meta["stage"] == "consistency" and meta["config"] == "cfg" and back.step == 1
    assert set(back.moments) == {"theta", "disc"}
    for group in ("theta", "theta_minus", "phi", "disc"):
        a, b = getattr(state, group), getattr(back, group)
        assert all(torch.equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
    assert not any(p.requires_grad for p in back.phi.parameters())


def test_flipped_byte_rejected():
    buf = bytearray(dumps(init_state(CFG)))
    for pos in (10, len(buf) // 2, len(buf) - 1):
        bad = bytearray(buf)
        bad[pos] ^= 0x01
        with pytest.raises(ChecksumError):
            loads(bytes(bad))


def test_digest_mismatch_rejected(tmp_path):
    p = save_checkpoint(init_state(CFG), tmp_path / "a.ckpt")
    with pytest.raises(DigestError):
        load_checkpoint(p, NetConfig(base_channels=8, time_embed_dim=8, disc_channels=4))


def test_version_mismatch_rejected():
    import hashlib

    buf = bytearray(dumps(init_state(CFG)))
    buf[4:8] = struct.pack("<I", 99)
    body = bytes(buf[:-32])
    with pytest.raises(VersionError):
        loads(body + hashlib.sha256(body).digest())


def test_errors_are_distinct():
    assert len({ChecksumError, VersionError, DigestError}) == 3
    assert all(issubclass(e, CheckpointError) for e in (ChecksumError, VersionError, DigestError))


def test_not_a_checkpoint():
    with pytest.raises(CheckpointError):
        loads(b"PNG\x00" * 40)


def test_header_layout():
    state = init_state(CFG)
    state.step = 7
    buf = dumps(state)
    assert buf[:4] == b"FSR1"
    assert struct.unpack("<I", buf[4:8])[0] == 1
    assert buf[8:40] == net_digest(CFG)
    assert struct.unpack("<Q", buf[40:48])[0] == 7


def test_atomic_write_leaves_no_temp(tmp_path):
    save_checkpoint(init_state(CFG), tmp_path / "x.ckpt")
    assert [p.name for p in tmp_path.iterdir()] == ["x.ckpt"]
    assert load_meta(tmp_path / "x.ckpt")["code_version"].startswith("rfsr-")
