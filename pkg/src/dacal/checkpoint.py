"""Versioned binary checkpoints.

Layout::

    b"DACALCKP" | uint32 version | uint64 manifest length | manifest (JSON) | data

The manifest lists every parameter array (name, dtype, shape, byte offset
into the data section, byte count), a CRC32 of the data section, and free
form metadata. Block names are ``netG0``..``netG4``, ``netD0``, ``netD1``
and ``netS1`` followed by the parameter path; the backward enhancer/critic
use a ``hat.`` prefix and sequence critics a ``seq.`` prefix.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointCorruptError, CheckpointShapeError, CheckpointVersionError

MAGIC = b"DACALCKP"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


@dataclass
class EnhancerCheckpoint:
    blocks: dict = field(default_factory=dict)  # name -> np.ndarray
    specs: dict = field(default_factory=dict)   # network role -> spec dict
    penalty_states: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)
    iteration: int = 0
    stage: int = 1
    mode: str = "supervised"
    version: int = VERSION

    def metadata(self) -> dict:
        return {
            "specs": self.specs,
            "penalty_states": self.penalty_states,
            "train_config": self.train_config,
            "iteration": self.iteration,
            "stage": self.stage,
            "mode": self.mode,
        }

    def state_dict(self, prefix: str = "") -> dict:
        """Tensors of one network, selected by name prefix."""
        out = {}
        for name, arr in self.blocks.items():
            if not name.startswith(prefix):
                continue
            rest = name[len(prefix):]
            if prefix == "" and (rest.startswith("hat.") or rest.startswith("seq.")):
                continue
            if prefix == "hat." and rest.startswith("seq."):
                continue
            out[rest] = torch.from_numpy(np.array(arr))
        return out


def module_blocks(module: torch.nn.Module, prefix: str = "") -> dict:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_module(module: torch.nn.Module, state: dict, role: str = "network") -> None:
    """Load ``state`` into ``module``, validating names and shapes."""
    expected = module.state_dict()
    missing = sorted(set(expected) - set(state))
    unexpected = sorted(set(state) - set(expected))
    if missing or unexpected:
        raise CheckpointShapeError(
            f"{role}: block mismatch (missing {missing[:4]}, unexpected {unexpected[:4]})")
    for k, v in expected.items():
        if tuple(state[k].shape) != tuple(v.shape):
            raise CheckpointShapeError(
                f"{role}: block {k} has shape {tuple(state[k].shape)}, expected {tuple(v.shape)}")
    module.load_state_dict({k: state[k].to(v.dtype) for k, v in expected.items()})


def _serialise(ckpt: EnhancerCheckpoint) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(ckpt.blocks):
        arr = np.asarray(ckpt.blocks[name])
        arr = arr if arr.flags.c_contiguous else arr.copy(order="C")  # keeps 0-d arrays 0-d
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        raw = arr.astype(dt, copy=False).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    data = b"".join(chunks)
    manifest = {"blocks": entries, "crc32": zlib.crc32(data), "meta": ckpt.metadata()}
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return _HEADER.pack(MAGIC, ckpt.version, len(mbytes)) + mbytes + data


def save_checkpoint(ckpt: EnhancerCheckpoint, path) -> Path:
    """Atomically write ``ckpt`` (temp file in the same directory + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _serialise(ckpt)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> EnhancerCheckpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointCorruptError(f"{path}: file too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointCorruptError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    start = _HEADER.size
    if len(raw) < start + mlen:
        raise CheckpointCorruptError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[start:start + mlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: unreadable manifest ({exc})") from exc
    data = raw[start + mlen:]
    total = sum(e["nbytes"] for e in manifest["blocks"])
    if len(data) != total:
        raise CheckpointCorruptError(f"{path}: data section has {len(data)} bytes, expected {total}")
    if zlib.crc32(data) != manifest["crc32"]:
        raise CheckpointCorruptError(f"{path}: data checksum mismatch")

    blocks = {}
    for e in manifest["blocks"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if count * dt.itemsize != e["nbytes"]:
            raise CheckpointShapeError(f"{path}: block {e['name']} byte count does not match its shape")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=e["offset"]).reshape(e["shape"])
        blocks[e["name"]] = arr.copy()
    meta = manifest["meta"]
    return EnhancerCheckpoint(
        blocks=blocks,
        specs=meta["specs"],
        penalty_states=meta["penalty_states"],
        train_config=meta["train_config"],
        iteration=meta["iteration"],
        stage=meta["stage"],
        mode=meta["mode"],
        version=version,
    )
