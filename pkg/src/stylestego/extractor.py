"""Message extractor: high-pass first layer, conv trunk with channel attention."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from . import codec
from .config import TrainConfig
from .filter_bank import N_FILTERS, FilterBank, extract_texture
from .substrate import Conv, ConvNormAct, ShapeError, global_avg_pool, relu, sigmoid


class ChannelAttention(nn.Module):
    """Squeeze-excitation gate ``sigmoid(W2 relu(W1 avgpool(x)))`` per channel.

    With ``enabled=False`` every gate is fixed at 0.5 (the ablation baseline).
    """

    def __init__(self, channels: int, reduction: int = 8, enabled: bool = True):
        super().__init__()
        if reduction <= 0 or channels % reduction:
            raise ValueError(f"reduction {reduction} must divide channel count {channels}")
        self.channels = channels
        self.w1 = nn.Parameter(torch.empty(channels // reduction, channels))
        self.w2 = nn.Parameter(torch.empty(channels, channels // reduction))
        nn.init.kaiming_uniform_(self.w1, a=5 ** 0.5)
        nn.init.kaiming_uniform_(self.w2, a=5 ** 0.5)
        self.enabled = enabled

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"attention: channel axis mismatch ({x.shape[1]} vs {self.channels})")
        if not self.enabled:
            return x.new_full(x.shape[:2], 0.5)
        z = global_avg_pool(x)
        return sigmoid(relu(z @ self.w1.T) @ self.w2.T)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gates(x)[:, :, None, None]


def attend(features: torch.Tensor, att: ChannelAttention) -> torch.Tensor:
    return att(features)


class ExtractorNet(nn.Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.grid = codec.Grid(*cfg.grid_shape)
        self.bank = FilterBank(cfg.filter_init, seed=cfg.seed + 1)
        chans = (N_FILTERS, *cfg.ext_widths)
        self.stages = nn.ModuleList(
            ConvNormAct(a, b, 3, stride=2, act="lrelu", slope=cfg.slope) for a, b in zip(chans[:-1], chans[1:]))
        self.attention = nn.ModuleList(
            ChannelAttention(c, cfg.reduction, cfg.attention) for c in cfg.ext_widths)
        self.head = Conv(cfg.ext_widths[-1], cfg.msg_channels, 3)

    def forward(self, stego: torch.Tensor) -> torch.Tensor:
        """Raw ``N x C x H/16 x W/16`` grid; sign of a keyed cell is the bit."""
        x = extract_texture(stego, self.bank)
        for stage, att in zip(self.stages, self.attention):
            x = att(stage(x))
        out = self.head(x)
        if tuple(out.shape[1:]) != self.grid.shape:
            raise ShapeError(
                f"extract: stego of {tuple(stego.shape[-2:])} gives grid {tuple(out.shape[1:])}, "
                f"checkpoint expects {self.grid.shape}")
        return out


@torch.no_grad()
def extract(stego: torch.Tensor, net: ExtractorNet, seed: int, length: int) -> np.ndarray:
    batched = stego.dim() == 4
    raw = net(stego if batched else stego.unsqueeze(0))
    bits = codec.decide_bits(raw, seed, length)
    return bits if batched else bits[0]


def secret_loss(target: torch.Tensor, raw: torch.Tensor, delta_tol: float = 0.0) -> torch.Tensor:
    """Hinged squared error ``mean max(0, (m - m_hat)^2 - delta_tol)`` over placed cells.

    ``target`` is the mapped ±1/0 grid; cells where it is 0 carry no bit and
    are excluded.
    """
    if delta_tol < 0:
        raise ValueError("delta_tol must be non-negative")
    if target.shape != raw.shape:
        raise ShapeError(f"secret_loss: target {tuple(target.shape)} vs prediction {tuple(raw.shape)}")
    mask = target != 0
    err = torch.relu((target - raw)[mask] ** 2 - delta_tol)
    return err.mean()
