"""Differentiable building blocks and the Adam optimizer.

Autodiff is PyTorch's reverse-mode tape; this module adds the shape
contracts, the block layouts used by every network in the package, and an
explicit Adam whose moments are plain tensors (so checkpoints can store
them in a declared order).

All batch tensors are ``N x C x H x W``.  Images live in ``[-1, 1]``.
"""
from __future__ import annotations

import logging
import math
from typing import Iterable

import torch
import torch.nn.functional as F
from torch import nn

log = logging.getLogger(__name__)

_AXES = ("batch", "channel", "height", "width")


class ShapeError(ValueError):
    """Raised when a tensor does not have the layout an op expects."""


def _require_4d(x: torch.Tensor, name: str = "x") -> None:
    if x.dim() != 4:
        raise ShapeError(f"{name}: expected 4 axes (batch, channel, height, width), got shape {tuple(x.shape)}")


def check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str = "operands") -> None:
    if a.shape == b.shape:
        return
    if a.dim() != b.dim():
        raise ShapeError(f"{what}: rank mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    names = _AXES if a.dim() == 4 else tuple(f"axis {i}" for i in range(a.dim()))
    for axis, (p, q) in enumerate(zip(a.shape, b.shape)):
        if p != q:
            raise ShapeError(f"{what}: {names[axis]} axis mismatch ({p} vs {q})")
    raise AssertionError("unreachable")


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    pad: int | None = None,
    pad_mode: str = "zeros",
) -> torch.Tensor:
    """2-D cross-correlation.

    ``weight`` is ``Cout x Cin x k x k`` with odd ``k``.  ``pad`` defaults to
    ``k // 2`` so stride 1 preserves ``H x W`` and stride 2 gives
    ``ceil(H / 2)``.  ``pad_mode`` is ``"zeros"`` or ``"reflect"``.
    """
    _require_4d(x)
    if weight.dim() != 4:
        raise ShapeError(f"weight: expected (Cout, Cin, k, k), got shape {tuple(weight.shape)}")
    cout, cin, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"weight: kernel must be square with odd size, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ShapeError(f"channel axis mismatch: input has {x.shape[1]}, kernel expects {cin}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias: expected ({cout},), got {tuple(bias.shape)}")
    pad = kh // 2 if pad is None else pad
    if pad:
        if pad_mode == "reflect":
            if pad >= min(x.shape[2], x.shape[3]):
                pad_mode = "replicate"
            x = F.pad(x, (pad, pad, pad, pad), mode=pad_mode)
        elif pad_mode == "zeros":
            x = F.pad(x, (pad, pad, pad, pad))
        else:
            raise ValueError(f"unknown pad_mode {pad_mode!r}")
    return F.conv2d(x, weight, bias, stride=stride)


def leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    return torch.maximum(x, slope * x)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def tanh(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def instance_norm(
    x: torch.Tensor,
    weight: torch.Tensor | None = None,
    bias: torch.Tensor | None = None,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Normalise every (sample, channel) plane to zero mean, unit variance."""
    _require_4d(x)
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    y = (x - mean) / torch.sqrt(var + eps)
    if weight is not None:
        y = y * weight.view(1, -1, 1, 1)
    if bias is not None:
        y = y + bias.view(1, -1, 1, 1)
    return y


def global_avg_pool(x: torch.Tensor) -> torch.Tensor:
    """``N x C x H x W -> N x C``."""
    _require_4d(x)
    return x.mean(dim=(2, 3))


def elementwise_product(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    check_same_shape(a, b, "elementwise product")
    return a * b


def concat_channels(*xs: torch.Tensor) -> torch.Tensor:
    for x in xs:
        _require_4d(x)
    ref = xs[0]
    for x in xs[1:]:
        if x.shape[0] != ref.shape[0]:
            raise ShapeError(f"concat: batch axis mismatch ({ref.shape[0]} vs {x.shape[0]})")
        if x.shape[2] != ref.shape[2]:
            raise ShapeError(f"concat: height axis mismatch ({ref.shape[2]} vs {x.shape[2]})")
        if x.shape[3] != ref.shape[3]:
            raise ShapeError(f"concat: width axis mismatch ({ref.shape[3]} vs {x.shape[3]})")
    return torch.cat(xs, dim=1)


def nearest_resize(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    _require_4d(x)
    return x.repeat_interleave(factor, dim=2).repeat_interleave(factor, dim=3)


class Conv(nn.Module):
    """Conv layer owning its parameters; forwards through :func:`conv2d`."""

    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1,
                 pad_mode: str = "reflect", bias: bool = True):
        super().__init__()
        self.stride = stride
        self.pad_mode = pad_mode
        self.weight = nn.Parameter(torch.empty(cout, cin, k, k))
        self.bias = nn.Parameter(torch.zeros(cout)) if bias else None
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        if self.bias is not None:
            bound = 1.0 / math.sqrt(cin * k * k)
            nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, pad_mode=self.pad_mode)


class InstanceNorm(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return instance_norm(x, self.weight, self.bias)


class ConvNormAct(nn.Module):
    """conv -> instance norm -> activation (``"relu"`` or ``"lrelu"``)."""

    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1,
                 act: str = "relu", norm: bool = True, slope: float = 0.2):
        super().__init__()
        self.conv = Conv(cin, cout, k, stride)
        self.norm = InstanceNorm(cout) if norm else None
        self.act = act
        self.slope = slope

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        if self.act == "relu":
            return relu(x)
        if self.act == "lrelu":
            return leaky_relu(x, self.slope)
        return x


class UpsampleBlock(nn.Module):
    """Nearest-neighbour x2 followed by a stride-1 conv, norm and ReLU."""

    def __init__(self, cin: int, cout: int, k: int = 3):
        super().__init__()
        self.body = ConvNormAct(cin, cout, k, stride=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(nearest_resize(x, 2))


class ResidualBlock(nn.Module):
    """``x + norm(conv(relu(norm(conv(x)))))``."""

    def __init__(self, channels: int, k: int = 3):
        super().__init__()
        self.channels = channels
        self.conv1 = Conv(channels, channels, k)
        self.norm1 = InstanceNorm(channels)
        self.conv2 = Conv(channels, channels, k)
        self.norm2 = InstanceNorm(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"residual block: channel axis mismatch ({x.shape[1]} vs {self.channels})")
        h = relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return x + h


class NonFiniteGradient(FloatingPointError):
    pass


class Adam:
    """Adam with bias correction over an ordered list of named parameters.

    Moments are stored alongside each parameter; ``step`` is shared.  A step
    with any non-finite gradient is rejected before touching state.
    """

    def __init__(self, named_params: Iterable[tuple[str, torch.Tensor]], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8):
        self.params: list[tuple[str, torch.Tensor]] = list(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.exp_avg = {n: torch.zeros_like(p) for n, p in self.params}
        self.exp_avg_sq = {n: torch.zeros_like(p) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def grads_finite(self) -> bool:
        return all(p.grad is None or bool(torch.isfinite(p.grad).all()) for _, p in self.params)

    @torch.no_grad()
    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr < 0:
            raise ValueError(f"lr must be non-negative, got {lr}")
        if not self.grads_finite():
            raise NonFiniteGradient("non-finite gradient; step rejected")
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.exp_avg[name]
            v = self.exp_avg_sq[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / c2).sqrt_().add_(self.eps)
            p.addcdiv_(m, denom, value=-lr / c1)

    def state_tensors(self) -> list[tuple[str, torch.Tensor]]:
        out = [(f"{n}.exp_avg", self.exp_avg[n]) for n, _ in self.params]
        out += [(f"{n}.exp_avg_sq", self.exp_avg_sq[n]) for n, _ in self.params]
        return out

