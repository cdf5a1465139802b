"""Binary checkpoint format.

Layout (all integers little endian)::

    b"FSR1"  u32 version  32-byte sha256 network-config digest  u64 step
    u32 meta_len  meta (UTF-8 JSON: stage, seed, net config, run config text)
    u32 n_blobs   n_blobs x [u16 name_len, name, u8 ndim, ndim x u32, float32 data]
    32-byte sha256 of every preceding byte

Blob names are ``theta/<param>``, ``theta_minus/<param>``, ``phi/<param>``,
``disc/<param>`` and ``moments/<group>/{m,v}/<param>``.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .distill import TrainState
from .nets import Discriminator, NetConfig, VelocityField

MAGIC = b"FSR1"
VERSION = 1
CODE_VERSION = "rfsr-0.1.0"


class CheckpointError(RuntimeError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class DigestError(CheckpointError):
    pass


def net_digest(cfg: NetConfig) -> bytes:
    return hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode()).digest()


def _blobs(state: TrainState) -> list[tuple[str, torch.Tensor]]:
    out = []
    for group in ("theta", "theta_minus", "phi", "disc"):
        mod = getattr(state, group)
        if mod is not None:
            out += [(f"{group}/{k}", p) for k, p in mod.named_parameters()]
    for group in sorted(state.moments):
        for name in sorted(state.moments[group]):
            m, v = state.moments[group][name]
            out += [(f"moments/{group}/m/{name}", m), (f"moments/{group}/v/{name}", v)]
    return out


def dumps(state: TrainState, config_text: str = "") -> bytes:
    meta = {"stage": state.stage, "seed": state.seed, "net": asdict(state.net_config),
            "config": config_text, "code_version": CODE_VERSION}
    meta_b = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), net_digest(state.net_config), struct.pack("<Q", state.step),
             struct.pack("<I", len(meta_b)), meta_b]
    blobs = _blobs(state)
    parts.append(struct.pack("<I", len(blobs)))
    for name, t in blobs:
        nb = name.encode()
        arr = t.detach().cpu().numpy().astype("<f4", copy=False)
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes(order="C")]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(state: TrainState, path, config_text: str = "") -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(dumps(state, config_text))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes, expected: NetConfig | None = None) -> tuple[TrainState, dict]:
    if len(buf) < 4 + 4 + 32 + 8 + 32 or buf[:4] != MAGIC:
        raise CheckpointError("not an FSR1 checkpoint")
    body, checksum = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise ChecksumError("checkpoint checksum mismatch (file corrupted)")
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, expected {VERSION}")
    digest = r.take(32)
    if expected is not None and net_digest(expected) != digest:
        raise DigestError("checkpoint network config digest does not match the requested config")
    (step,) = r.unpack("<Q")
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode())
    net_cfg = NetConfig(**meta["net"])
    if net_digest(net_cfg) != digest:
        raise DigestError("checkpoint header digest disagrees with its stored network config")
    (n,) = r.unpack("<I")
    blobs = {}
    for _ in range(n):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        blobs[name] = torch.from_numpy(arr.astype(np.float32))
    groups = {name.split("/", 1)[0] for name in blobs}

    def build(group, cls):
        if group not in groups:
            return None
        mod = cls(net_cfg)
        sd = {k.split("/", 1)[1]: v for k, v in blobs.items() if k.startswith(group + "/")}
        mod.load_state_dict(sd, strict=True)
        return mod

    state = TrainState(theta=build("theta", VelocityField), stage=meta["stage"], seed=meta["seed"], step=step)
    if state.theta is None:
        raise CheckpointError("checkpoint holds no student parameters")
    state.theta_minus = build("theta_minus", VelocityField)
    state.phi = build("phi", VelocityField)
    state.disc = build("disc", Discriminator)
    for mod in (state.theta_minus, state.phi):
        if mod is not None:
            for p in mod.parameters():
                p.requires_grad_(False)
    for name, t in blobs.items():
        if name.startswith("moments/"):
            _, group, kind, pname = name.split("/", 3)
            m, v = state.moments.setdefault(group, {}).get(pname, (None, None))
            state.moments[group][pname] = (t, v) if kind == "m" else (m, t)
    return state, meta


def load_checkpoint(path, expected: NetConfig | None = None) -> TrainState:
    return loads(Path(path).read_bytes(), expected)[0]


def load_meta(path) -> dict:
    return loads(Path(path).read_bytes())[1]
