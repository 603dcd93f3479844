"""Encoder / decoder / discriminator of the hiding network and their losses."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from . import codec
from .config import TrainConfig
from .filter_bank import ContentHead, FilterBank, content_feature
from .substrate import (Conv, ConvNormAct, ResidualBlock, ShapeError, UpsampleBlock,
                        concat_channels, leaky_relu, tanh)


class Encoder(nn.Module):
    """One stride-1 and four stride-2 conv-norm-ReLU layers (x16 downsampling)."""

    def __init__(self, widths: tuple[int, ...] = (32, 32, 64, 128, 256)):
        super().__init__()
        layers = [ConvNormAct(3, widths[0], 3, stride=1)]
        layers += [ConvNormAct(a, b, 3, stride=2) for a, b in zip(widths[:-1], widths[1:])]
        self.layers = nn.Sequential(*layers)
        self.out_channels = widths[-1]

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        h, w = img.shape[-2:]
        if h % 16 or w % 16:
            raise ShapeError(
                f"encode: height and width must be divisible by 16, got {h}x{w}; "
                f"resize or crop to {h // 16 * 16 or 16}x{w // 16 * 16 or 16}")
        return self.layers(img)


class Decoder(nn.Module):
    """Residual trunk, four upsampling blocks and a tanh output conv."""

    def __init__(self, in_channels: int, n_res: int = 9, widths: tuple[int, ...] = (128, 64, 32, 32)):
        super().__init__()
        self.in_channels = in_channels
        self.res = nn.Sequential(*(ResidualBlock(in_channels) for _ in range(n_res)))
        chans = (in_channels, *widths)
        self.up = nn.Sequential(*(UpsampleBlock(a, b) for a, b in zip(chans[:-1], chans[1:])))
        self.out = Conv(widths[-1], 3, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return tanh(self.out(self.up(self.res(x))))


class Discriminator(nn.Module):
    """Fully convolutional stack of stride-2 convs ending in a 1-channel logit map."""

    def __init__(self, n_layers: int = 4, width: int = 32, slope: float = 0.2):
        super().__init__()
        chans = [3] + [min(width * 2 ** i, 8 * width) for i in range(n_layers - 1)] + [1]
        self.convs = nn.ModuleList(Conv(a, b, 3, stride=2, pad_mode="zeros") for a, b in zip(chans[:-1], chans[1:]))
        self.slope = slope

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        x = img
        for conv in self.convs[:-1]:
            x = leaky_relu(conv(x), self.slope)
        return self.convs[-1](x)


class HidingNet(nn.Module):
    """Preprocessing (filter bank + content head), encoder and decoder."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.grid = codec.Grid(*cfg.grid_shape)
        self.bank = FilterBank(cfg.filter_init, seed=cfg.seed)
        self.head = ContentHead(cfg.msg_channels, cfg.head_widths, cfg.slope)
        self.encoder = Encoder(cfg.enc_widths)
        self.decoder = Decoder(cfg.enc_widths[-1] + cfg.msg_channels, cfg.n_res, cfg.dec_widths)

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        return self.encoder(img)

    def bound_secret(self, img: torch.Tensor, secret: torch.Tensor) -> torch.Tensor:
        """``M' = M * F`` with F the texture feature of ``img``."""
        return codec.bind(secret, content_feature(img, self.bank, self.head))

    def generate_stego(self, latent: torch.Tensor, bound: torch.Tensor) -> torch.Tensor:
        if latent.shape[-2:] != bound.shape[-2:]:
            raise ShapeError(
                f"generate_stego: spatial mismatch between latent {tuple(latent.shape[-2:])} "
                f"and bound secret {tuple(bound.shape[-2:])}")
        return self.decoder(concat_channels(latent, bound))

    def forward(self, img: torch.Tensor, secret: torch.Tensor) -> torch.Tensor:
        """Stylised stego image; pass ``secret=zeros`` for a cover."""
        return self.generate_stego(self.encode(img), self.bound_secret(img, secret))


def discriminator_loss(style_logits: torch.Tensor, stego_logits: torch.Tensor) -> torch.Tensor:
    """``-(E log D(s) + E log(1 - D(stego)))`` computed from logits."""
    return F.softplus(-style_logits).mean() + F.softplus(stego_logits).mean()


def generator_style_loss(stego_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss ``-E log D(stego)``."""
    return F.softplus(-stego_logits).mean()


def style_loss(disc: nn.Module, stego: torch.Tensor, style: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if stego.shape[0] == 0 or style.shape[0] == 0:
        raise ValueError("style_loss needs non-empty batches")
    stego_logits = disc(stego)
    return discriminator_loss(disc(style), stego_logits), generator_style_loss(stego_logits)


def content_loss(latent: torch.Tensor, latent_stego: torch.Tensor) -> torch.Tensor:
    """Mean squared distance between encoder features of content and stego."""
    return ((latent - latent_stego) ** 2).mean()


def total_loss(lam: float, style_g, content, mu: float, secret):
    return lam * style_g + content + mu * secret
