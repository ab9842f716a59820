"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MVKTCKPT"            8-byte magic
    uint32 version
    uint32 header_len
    header                 UTF-8 JSON: format_version, backbone, train_config,
                           epoch, meta, banks, tensors [{name, shape}]
    payload                float32 LE tensors, concatenated in header order

Tensor order is sorted by name, and the header is serialized with sorted
keys, so save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .memory_bank import MemoryBank
from .models import BackboneConfig, ModelParams

MAGIC = b"MVKTCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: ModelParams
    train_config: dict | None = None
    epoch: int = 0
    meta: dict = field(default_factory=dict)
    banks: dict[str, MemoryBank] = field(default_factory=dict)

    @property
    def backbone(self) -> BackboneConfig:
        return self.model.config

    @property
    def label_names(self) -> list[str] | None:
        return self.meta.get("label_names")

    def digest(self) -> str:
        return hashlib.sha256(to_bytes(self)).hexdigest()


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors = [(name, t.detach().numpy()) for name, t in ckpt.model.named_tensors()]
    for role in sorted(ckpt.banks):
        tensors.append((f"bank.{role}", ckpt.banks[role].rows))
    header = {
        "format_version": FORMAT_VERSION,
        "backbone": ckpt.model.config.to_json(),
        "train_config": ckpt.train_config,
        "epoch": int(ckpt.epoch),
        "meta": ckpt.meta,
        "banks": {role: {"momentum": b.momentum} for role, b in sorted(ckpt.banks.items())},
        "buffers": sorted(ckpt.model.buffers),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head]
    parts += [np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in tensors]
    return b"".join(parts)


def from_bytes(raw: bytes) -> Checkpoint:
    if raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise CheckpointError(f"truncated checkpoint at tensor {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError("trailing bytes after checkpoint payload")

    model = ModelParams(BackboneConfig(**header["backbone"]))
    buffers = set(header.get("buffers", []))
    banks = {}
    for name, arr in arrays.items():
        if name.startswith("bank."):
            role = name[len("bank."):]
            banks[role] = MemoryBank(arr.copy(), header["banks"][role]["momentum"])
        elif name in buffers:
            model.buffers[name] = torch.from_numpy(arr.copy())
        else:
            model.params[name] = torch.from_numpy(arr.copy())
    return Checkpoint(model, header["train_config"], header["epoch"], header["meta"], banks)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    data = to_bytes(ckpt)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
