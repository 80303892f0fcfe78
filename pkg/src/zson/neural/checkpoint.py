"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ZSONCKPT"                 magic
    u32                         format version
    32 bytes                    sha256 of the policy architecture config
    u32 + JSON                  metadata (policy config, trainer counters, ...)
    u32                         number of blocks
    blocks: u16 name length, name (utf-8), u8 ndim, u32 dims..., f32 data

Optimizer moments are stored as blocks named ``adam.m/<param>`` and
``adam.v/<param>``; the optimizer step counter lives in the metadata.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .policy import PolicyConfig, PolicyNetwork

MAGIC = b"ZSONCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_block(f, name: str, arr: np.ndarray) -> None:
    raw = name.encode()
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def _read_block(f):
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    name = _read_exact(f, n).decode()
    (ndim,) = struct.unpack("<B", _read_exact(f, 1))
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").astype(np.float32).reshape(shape)
    return name, arr


def save_checkpoint(path, net: PolicyNetwork, optimizer=None, meta: dict | None = None) -> str:
    """Write ``net`` (and optionally optimizer state) to ``path``; returns the file's sha256."""
    meta = dict(meta or {})
    meta["policy_config"] = net.cfg.to_dict()
    blocks = list(net.state_dict().items())
    if optimizer is not None:
        st = optimizer.state_dict()
        meta["adam_step"] = int(st["step"])
        blocks += [(f"adam.m/{k}", v) for k, v in st["m"].items()]
        blocks += [(f"adam.v/{k}", v) for k, v in st["v"].items()]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(bytes.fromhex(net.cfg.digest()))
    mj = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(mj)))
    buf.write(mj)
    buf.write(struct.pack("<I", len(blocks)))
    for name, arr in blocks:
        _write_block(buf, name, arr)
    data = buf.getvalue()
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into (config digest, metadata, blocks)."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: format version mismatch: expected {VERSION}, found {version}")
        digest = _read_exact(f, 32).hex()
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        meta = json.loads(_read_exact(f, n))
        (nb,) = struct.unpack("<I", _read_exact(f, 4))
        blocks = dict(_read_block(f) for _ in range(nb))
    return digest, meta, blocks


def load_checkpoint(path, net: PolicyNetwork | None = None, optimizer=None):
    """Restore parameters (and optimizer state when given).

    Without ``net`` a network is built from the stored config. Returns
    ``(net, meta)``.
    """
    digest, meta, blocks = read_checkpoint(path)
    cfg = PolicyConfig(**meta["policy_config"])
    if cfg.digest() != digest:
        raise CheckpointError(f"{path}: stored config does not match its hash")
    if net is None:
        net = PolicyNetwork(cfg)
    elif net.cfg.digest() != digest:
        raise CheckpointError(f"{path}: architecture mismatch: checkpoint {cfg} vs network {net.cfg}")
    missing = [k for k in net.params if k not in blocks]
    if missing:
        raise CheckpointError(f"{path}: missing parameter blocks {missing}")
    net.load_state_dict({k: blocks[k] for k in net.params})
    if optimizer is not None:
        if "adam_step" not in meta:
            raise CheckpointError(f"{path}: checkpoint carries no optimizer state")
        optimizer.load_state_dict({
            "step": meta["adam_step"],
            "m": {k: blocks[f"adam.m/{k}"] for k in net.params},
            "v": {k: blocks[f"adam.v/{k}"] for k in net.params},
        })
    return net, meta
