"""Single-file checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"STSTEGO\\x00"
    version      uint32
    header_len   uint64
    header       UTF-8 JSON, sorted keys; ``tensors`` lists (name, shape)
    blobs        float32 values of each tensor, in header order
    checksum     32-byte SHA-256 of everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

MAGIC = b"STSTEGO\x00"
FORMAT_VERSION = 1
_DIGEST = 32


class CheckpointError(Exception):
    pass


class IntegrityError(CheckpointError):
    pass


class FormatVersionError(CheckpointError):
    pass


class ArchitectureMismatch(CheckpointError):
    pass


def encode(header: dict[str, Any], tensors: list[tuple[str, torch.Tensor]]) -> bytes:
    header = dict(header)
    header["tensors"] = [{"name": n, "shape": list(t.shape)} for n, t in tensors]
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(head)), head]
    for name, t in tensors:
        arr = t.detach().cpu().numpy()
        if arr.dtype != np.float32:
            raise CheckpointError(f"tensor {name} has dtype {arr.dtype}; only float32 is stored")
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes) -> tuple[dict[str, Any], dict[str, torch.Tensor]]:
    fixed = len(MAGIC) + 12
    if len(blob) < fixed + _DIGEST:
        raise IntegrityError(f"checkpoint truncated ({len(blob)} bytes)")
    if blob[:len(MAGIC)] != MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic bytes)")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint checksum mismatch (file corrupt or truncated)")
    version, head_len = struct.unpack("<IQ", body[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    header = json.loads(body[fixed:fixed + head_len].decode())
    offset = fixed + head_len
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + n > len(body):
            raise IntegrityError(f"tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(body, dtype="<f4", count=n // 4, offset=offset).reshape(shape)
        tensors[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += n
    if offset != len(body):
        raise IntegrityError("trailing bytes after tensor data")
    return header, tensors


def write(path: str | Path, header: dict[str, Any], tensors: list[tuple[str, torch.Tensor]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(header, tensors))
    tmp.replace(path)


def read(path: str | Path) -> tuple[dict[str, Any], dict[str, torch.Tensor]]:
    return decode(Path(path).read_bytes())
