"""Flat named-tensor archive shared by every learnable module.

Layout (little-endian): magic ``AVSGCKPT``, u32 tensor count, then per
tensor: u32 name length, utf-8 name, u32 ndim, ndim x u32 dims, row-major
float32 payload.  A JSON manifest travels next to the archive.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

MAGIC = b"AVSGCKPT"


class CheckpointError(ValueError):
    pass


def save_tensors(path: str | Path, tensors: Mapping[str, torch.Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path: str | Path) -> dict[str, torch.Tensor]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint archive")
    (count,) = struct.unpack_from("<I", data, 8)
    pos, out = 12, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4 : pos + 4 + n].decode()
        pos += 4 + n
        (ndim,) = struct.unpack_from("<I", data, pos)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
        pos += 4 + 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        out[name] = torch.from_numpy(arr.copy())
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def manifest_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_manifest(path: str | Path, manifest: dict) -> None:
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_manifest(path: str | Path) -> dict:
    mp = manifest_path(path)
    if not mp.exists():
        raise CheckpointError(f"missing checkpoint manifest {mp}")
    return json.loads(mp.read_text())
