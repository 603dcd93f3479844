"""Bit message <-> secret feature grid.

A message of ``L`` bits is scattered as ``+1`` (bit 1) / ``-1`` (bit 0) over
a key-dependent subset of cells of a ``C x H' x W'`` grid; every other cell is
0.  The key (an integer seed) fixes a permutation of the grid cells and is
shared out of band by sender and receiver.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .substrate import check_same_shape


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    channels: int
    height: int
    width: int

    @property
    def capacity(self) -> int:
        return self.channels * self.height * self.width

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


def placement(grid: Grid, seed: int, length: int) -> np.ndarray:
    """Flat cell indices of bits ``0..length-1`` under key ``seed``."""
    if length <= 0:
        raise ValueError(f"message length must be positive, got {length}")
    if length > grid.capacity:
        raise CapacityError(
            f"message of {length} bits exceeds grid capacity {grid.capacity} "
            f"({grid.channels}x{grid.height}x{grid.width})")
    perm = np.random.default_rng(seed).permutation(grid.capacity)
    return perm[:length]


def random_bits(rng: np.random.Generator, length: int, batch: int | None = None) -> np.ndarray:
    shape = (length,) if batch is None else (batch, length)
    return rng.integers(0, 2, size=shape, dtype=np.uint8)


def map_bits(bits, grid: Grid, seed: int) -> torch.Tensor:
    """Scatter ``bits`` (``L`` or ``N x L``) into a ``[N x] C x H' x W'`` float tensor."""
    arr = np.asarray(bits)
    if arr.ndim not in (1, 2):
        raise ValueError(f"bits must have shape (L,) or (N, L), got {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("bits must be 0 or 1")
    batched = arr.ndim == 2
    arr = np.atleast_2d(arr)
    idx = placement(grid, seed, arr.shape[1])
    flat = np.zeros((arr.shape[0], grid.capacity), dtype=np.float32)
    flat[:, idx] = 2.0 * arr.astype(np.float32) - 1.0
    out = torch.from_numpy(flat.reshape(arr.shape[0], *grid.shape))
    return out if batched else out[0]


def bind(secret: torch.Tensor, feature: torch.Tensor) -> torch.Tensor:
    """Texture-adaptive binding ``M' = M * F`` (elementwise)."""
    check_same_shape(secret, feature, "bind")
    return secret * feature


def decide_bits(raw: torch.Tensor, seed: int, length: int) -> np.ndarray:
    """Sign rule on the keyed cells: ``> 0`` -> 1, otherwise 0 (ties decode as 0)."""
    batched = raw.dim() == 4
    r = raw if batched else raw.unsqueeze(0)
    grid = Grid(*r.shape[1:])
    idx = torch.from_numpy(placement(grid, seed, length))
    vals = r.detach().reshape(r.shape[0], -1)[:, idx]
    out = (vals > 0).to(torch.uint8).cpu().numpy()
    return out if batched else out[0]


def gather_cells(raw: torch.Tensor, seed: int, length: int) -> torch.Tensor:
    """Differentiable ``N x L`` view of the keyed cells of ``raw``."""
    grid = Grid(*raw.shape[1:])
    idx = torch.from_numpy(placement(grid, seed, length))
    return raw.reshape(raw.shape[0], -1)[:, idx]


def bits_to_hex(bits) -> str:
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.size % 4:
        raise ValueError(f"hex needs a multiple of 4 bits, got {arr.size}")
    nibbles = arr.reshape(-1, 4) @ np.array([8, 4, 2, 1])
    return "".join(f"{n:x}" for n in nibbles)


def hex_to_bits(text: str) -> np.ndarray:
    text = text.strip().lower()
    if text.startswith("0x"):
        text = text[2:]
    if not text or not re.fullmatch(r"[0-9a-f]+", text):
        raise ValueError("not a hex string")
    return np.array([int(b) for c in text for b in f"{int(c, 16):04b}"], dtype=np.uint8)


def bits_to_text(bits) -> str:
    return "".join(str(int(b)) for b in np.asarray(bits).ravel())


def text_to_bits(text: str) -> np.ndarray:
    s = re.sub(r"\s+", "", text)
    if not s or set(s) - {"0", "1"}:
        raise ValueError("bit text must contain only 0/1 characters")
    return np.array([int(c) for c in s], dtype=np.uint8)


def read_message(path: str | Path, fmt: str | None = None) -> np.ndarray:
    """Load a message file.

    ``fmt`` is ``"hex"`` or ``"bits"``; by default ``.hex`` files are hex and
    everything else is bit text (one ``0``/``1`` per bit, whitespace ignored).
    """
    path = Path(path)
    fmt = fmt or ("hex" if path.suffix.lower() == ".hex" else "bits")
    text = path.read_text()
    return hex_to_bits(text) if fmt == "hex" else text_to_bits(text)


def write_message(path: str | Path, bits, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("hex" if path.suffix.lower() == ".hex" else "bits")
    path.write_text((bits_to_hex(bits) if fmt == "hex" else bits_to_text(bits)) + "\n")
