"""Learnable high-pass filter bank seeded from SRM residual kernels."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .substrate import Conv, ShapeError, conv2d, leaky_relu

N_FILTERS = 32
KERNEL_SIZE = 5


def load_srm_table(path: str | Path | None = None) -> list[tuple[str, np.ndarray]]:
    """Parse the ``kernel <name> <divisor>`` table into ``(name, 5x5 grid)`` pairs."""
    if path is None:
        text = resources.files("stylestego").joinpath("data/srm_kernels.txt").read_text()
    else:
        text = Path(path).read_text()
    rows = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    rows = [r for r in rows if r]
    table = []
    i = 0
    while i < len(rows):
        head = rows[i].split()
        if head[0] != "kernel" or len(head) != 3:
            raise ValueError(f"malformed SRM table header: {rows[i]!r}")
        name, divisor = head[1], float(head[2])
        grid = np.array([[float(v) for v in r.split()] for r in rows[i + 1:i + 1 + KERNEL_SIZE]])
        if grid.shape != (KERNEL_SIZE, KERNEL_SIZE):
            raise ValueError(f"kernel {name}: expected a 5x5 grid, got {grid.shape}")
        table.append((name, grid / divisor))
        i += 1 + KERNEL_SIZE
    return table


def srm_kernels() -> tuple[list[str], np.ndarray]:
    """The 32 initial kernels (``32 x 5 x 5``) and their names."""
    names, grids = [], []
    for name, grid in load_srm_table():
        for rot in range(4):
            names.append(f"{name}_r{rot * 90}")
            grids.append(np.rot90(grid, k=rot))
    if len(grids) != N_FILTERS:
        raise ValueError(f"SRM table expands to {len(grids)} kernels, need {N_FILTERS}")
    return names, np.stack(grids)


class FilterBank(nn.Module):
    """32 kernels of shape ``3 x 5 x 5`` producing a ``32``-channel residual map."""

    def __init__(self, init: str = "srm", seed: int = 0, frozen: bool = False):
        super().__init__()
        if init == "srm":
            _, grids = srm_kernels()
            w = torch.from_numpy(np.repeat(grids[:, None] / 3.0, 3, axis=1).copy()).float()
        elif init == "random":
            g = torch.Generator().manual_seed(seed)
            w = torch.randn(N_FILTERS, 3, KERNEL_SIZE, KERNEL_SIZE, generator=g) / (3 * KERNEL_SIZE)
        else:
            raise ValueError(f"unknown filter init {init!r}")
        self.init = init
        self.weight = nn.Parameter(w)
        self.frozen = frozen

    @property
    def frozen(self) -> bool:
        return not self.weight.requires_grad

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self.weight.requires_grad_(not value)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return extract_texture(img, self)


def init_srm_bank(seed: int = 0) -> FilterBank:
    # SRM initialisation is fixed; the seed only matters for init="random".
    return FilterBank("srm", seed=seed)


def extract_texture(img: torch.Tensor, bank: FilterBank) -> torch.Tensor:
    """Stride-1, reflect-padded residual map ``N x 32 x H x W``.

    Each image plane is centred first.  For zero-sum kernels this is a no-op
    in exact arithmetic, but float32 kernels like 1/36 do not sum to exactly
    zero, and centring keeps the response to a flat image at 0 regardless.
    Reflect padding keeps flat borders flat.
    """
    if img.dim() != 4 or img.shape[1] != 3:
        raise ShapeError(f"extract_texture: expected N x 3 x H x W image, got {tuple(img.shape)}")
    centred = img - img.mean(dim=(2, 3), keepdim=True)
    return conv2d(centred, bank.weight, None, stride=1, pad_mode="reflect")


class ContentHead(nn.Module):
    """Four conv layers with Leaky ReLU turning residuals into the content feature F.

    Each layer has stride 2, so F lands on the ``H/16 x W/16`` secret grid.
    """

    def __init__(self, out_channels: int, widths: tuple[int, int, int] = (32, 64, 64),
                 slope: float = 0.2, bias: bool = True):
        super().__init__()
        chans = (N_FILTERS, *widths, out_channels)
        self.convs = nn.ModuleList(Conv(a, b, 3, stride=2, bias=bias) for a, b in zip(chans[:-1], chans[1:]))
        self.slope = slope
        # Gain-preserving init with zero bias.  The default conv init shrinks
        # activations ~0.4x per layer, which left F dominated by bias noise
        # rather than texture.
        for conv in self.convs:
            nn.init.kaiming_normal_(conv.weight, a=slope, nonlinearity="leaky_relu")
            if conv.bias is not None:
                nn.init.zeros_(conv.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = leaky_relu(conv(x), self.slope)
        return x


def content_feature(img: torch.Tensor, bank: FilterBank, head: ContentHead) -> torch.Tensor:
    return head(extract_texture(img, bank))
