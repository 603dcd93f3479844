"""Reliability, quality and security evaluation of trained checkpoints.

Everything here treats checkpoints as read-only.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import codec
from .config import TrainConfig
from .data import ImageSet, quantize
from .substrate import Conv, leaky_relu
from .trainer import TrainState, load_checkpoint, run_training

# Values reported at full scale (256px, 300k iterations, SRNet); kept for the
# report, never asserted.
FULL_SCALE_REFERENCE = {
    "bit_accuracy": {"1000": 0.99, "2000": 0.98},
    "ablation": {"attention_only": 0.96, "filters_only": 0.98, "both": 0.99},
    "ssim": {"cezanne": 0.93, "gauguin": 0.93, "monet": 0.91},
    "detector_accuracy": {
        "1000": {"ignorant": 0.55, "knowledgeable": 0.60, "omniscient": 0.71},
        "2000": {"ignorant": 0.59, "knowledgeable": 0.73, "omniscient": 0.84},
    },
}


@torch.no_grad()
def embed(state: TrainState, content: torch.Tensor, bits: np.ndarray | None, key: int | None = None) -> torch.Tensor:
    """Stego images for ``content``; ``bits=None`` gives covers (message path zeroed)."""
    key = state.cfg.key if key is None else key
    if bits is None:
        secret = torch.zeros(content.shape[0], *state.grid.shape)
    else:
        secret = codec.map_bits(np.atleast_2d(bits), state.grid, key)
    return state.hiding(content, secret)


@torch.no_grad()
def bit_accuracy(state: TrainState, images: ImageSet | torch.Tensor, n_trials: int, seed: int = 0,
                 extractor: Callable[[torch.Tensor, np.ndarray], np.ndarray] | None = None,
                 batch: int = 10) -> float:
    """Mean fraction of recovered bits over ``n_trials`` fresh (message, image) pairs.

    ``extractor(stego, secret_grid) -> bits`` replaces the trained extractor
    when given (used for oracle / chance baselines).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    cfg = state.cfg
    rng = np.random.default_rng(seed)
    hits = total = 0
    done = 0
    while done < n_trials:
        n = min(batch, n_trials - done)
        content = images.sample(rng, n) if isinstance(images, ImageSet) else images[done:done + n]
        bits = codec.random_bits(rng, cfg.msg_len, n)
        stego = embed(state, content, bits)
        if extractor is None:
            got = codec.decide_bits(state.extractor(stego), cfg.key, cfg.msg_len)
        else:
            got = extractor(stego, codec.map_bits(bits, state.grid, cfg.key))
        hits += int((got == bits).sum())
        total += bits.size
        done += n
    return hits / total


def binomial_band(n_bits: int, p: float = 0.5, sigmas: float = 3.0) -> tuple[float, float]:
    sd = math.sqrt(p * (1 - p) / n_bits)
    return p - sigmas * sd, p + sigmas * sd


# -- SSIM ----------------------------------------------------------------------

def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM of two ``H x W x C`` images with values in ``[0, 1]``.

    Gaussian-weighted statistics over every full window (no padding),
    averaged over windows and channels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < window:
        raise ValueError(f"ssim: images must be at least {window}px on each side")
    c1, c2 = k1 ** 2, k2 ** 2
    w = torch.from_numpy(_gaussian_window(window, sigma))[None, None]
    x = torch.from_numpy(a.transpose(2, 0, 1).copy())[:, None]
    y = torch.from_numpy(b.transpose(2, 0, 1).copy())[:, None]
    filt = lambda t: F.conv2d(t, w)
    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx ** 2
    vy = filt(y * y) - my ** 2
    cxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    return float(smap.mean())


def to_unit(img: torch.Tensor) -> np.ndarray:
    """``[-1, 1]`` tensor image (``3 x H x W`` or ``1 x 3 x H x W``) -> ``H x W x 3`` in ``[0, 1]``."""
    if img.dim() == 4:
        img = img[0]
    return (img.detach().cpu().numpy().transpose(1, 2, 0) + 1.0) / 2.0


@torch.no_grad()
def stego_cover_ssim(state: TrainState, images: ImageSet, n: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    content = images.sample(rng, n)
    bits = codec.random_bits(rng, state.cfg.msg_len, n)
    stego, cover = embed(state, content, bits), embed(state, content, None)
    return float(np.mean([ssim(to_unit(s), to_unit(c)) for s, c in zip(stego, cover)]))


# -- steganalysis ----------------------------------------------------------------

@dataclass
class DetectorConfig:
    width: int = 16
    epochs: int = 12
    batch: int = 16
    lr: float = 1e-3
    seed: int = 0
    min_pairs: int = 200
    n_train: int = 200  # pairs per checkpoint set
    n_test: int = 100
    repeats: int = 1  # independent detector fits averaged per scenario


class Detector(nn.Module):
    """Reduced SRNet-style steganalyser.

    Two unpooled residual-preserving conv layers, then four conv + average
    pool blocks, global pooling and a linear head producing one logit.
    """

    def __init__(self, width: int = 16):
        super().__init__()
        self.front = nn.ModuleList([Conv(3, width, 3, pad_mode="zeros"), Conv(width, width, 3, pad_mode="zeros")])
        chans = [width, width, 2 * width, 2 * width, 4 * width]
        self.blocks = nn.ModuleList(Conv(a, b, 3, pad_mode="zeros") for a, b in zip(chans[:-1], chans[1:]))
        self.norms = nn.ModuleList(nn.BatchNorm2d(c) for c in chans[1:])
        self.fc = nn.Linear(chans[-1], 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.front:
            x = leaky_relu(conv(x), 0.2)
        for conv, norm in zip(self.blocks, self.norms):
            x = F.avg_pool2d(leaky_relu(norm(conv(x)), 0.2), 2)
        return self.fc(x.mean(dim=(2, 3)))[:, 0]


def train_detector(cover: torch.Tensor, stego: torch.Tensor, cfg: DetectorConfig) -> Detector:
    """Fit a fresh detector (cover -> 0, stego -> 1) from scratch."""
    if min(len(cover), len(stego)) < cfg.min_pairs:
        raise ValueError(f"detector needs at least {cfg.min_pairs} images per class, "
                         f"got {len(cover)} cover / {len(stego)} stego")
    torch.manual_seed(cfg.seed)
    det = Detector(cfg.width)
    opt = torch.optim.Adam(det.parameters(), lr=cfg.lr)
    x = torch.cat([cover, stego])
    y = torch.cat([torch.zeros(len(cover)), torch.ones(len(stego))])
    gen = torch.Generator().manual_seed(cfg.seed)
    det.train()
    for _ in range(cfg.epochs):
        order = torch.randperm(len(x), generator=gen)
        for i in range(0, len(x), cfg.batch):
            idx = order[i:i + cfg.batch]
            if len(idx) < 2:
                continue
            loss = F.binary_cross_entropy_with_logits(det(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return det.eval()


@torch.no_grad()
def detector_accuracy(det: Detector, cover: torch.Tensor, stego: torch.Tensor) -> float:
    """Balanced accuracy: mean of per-class accuracies."""
    tnr = float((det(cover) <= 0).float().mean())
    tpr = float((det(stego) > 0).float().mean())
    return (tnr + tpr) / 2


def through_png(img: torch.Tensor) -> torch.Tensor:
    """Apply the 8-bit quantisation a saved PNG would."""
    return torch.from_numpy(quantize(img.numpy()).astype(np.float32) / 127.5 - 1.0)


@torch.no_grad()
def make_pairs(state: TrainState, images: ImageSet, n: int, seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    """``n`` (cover, stego) pairs on shared content crops, quantised to 8 bits."""
    rng = np.random.default_rng(seed)
    covers, stegos = [], []
    for i in range(0, n, 25):
        k = min(25, n - i)
        content = images.sample(rng, k)
        bits = codec.random_bits(rng, state.cfg.msg_len, k)
        covers.append(through_png(embed(state, content, None)))
        stegos.append(through_png(embed(state, content, bits)))
    return torch.cat(covers), torch.cat(stegos)


SCENARIOS = ("ignorant", "knowledgeable", "omniscient")


@dataclass
class ScenarioSpec:
    kind: str
    train: list[str]
    test: list[str]

    def __post_init__(self) -> None:
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.kind!r}")
        tr, te = set(map(str, self.train)), set(map(str, self.test))
        if len(te) != 1:
            raise ValueError(f"{self.kind}: exactly one test checkpoint required")
        if self.kind == "ignorant" and (len(tr) != 1 or tr & te):
            raise ValueError("ignorant: train on one checkpoint, test on a different one")
        if self.kind == "knowledgeable" and (len(tr) < 2 or tr & te):
            raise ValueError("knowledgeable: train on several checkpoints, test on a held-out one")
        if self.kind == "omniscient" and tr != te:
            raise ValueError("omniscient: train and test checkpoints must be the same")

    @classmethod
    def standard(cls, kind: str, ckpts: Sequence[str | Path]) -> list["ScenarioSpec"]:
        """Scenario specs from checkpoints ordered by training step; the last is the target.

        The ignorant analyst holds one earlier iteration without knowing which,
        so it gets one spec per earlier checkpoint and results are averaged
        over them.  The knowledgeable analyst pools those same checkpoints.
        """
        ckpts = [str(c) for c in ckpts]
        need = 3 if kind == "knowledgeable" else 2
        if len(ckpts) < need:
            raise ValueError(f"{kind} scenario needs at least {need} checkpoints, got {len(ckpts)}")
        target, earlier = ckpts[-1], ckpts[:-1]
        if kind == "ignorant":
            return [cls(kind, [c], [target]) for c in earlier]
        if kind == "knowledgeable":
            return [cls(kind, earlier, [target])]
        return [cls(kind, [target], [target])]


def run_scenario(specs: ScenarioSpec | Sequence[ScenarioSpec], images: ImageSet,
                 det_cfg: DetectorConfig | None = None) -> dict:
    """Train detectors on each spec's train checkpoints and score them on fresh test pairs.

    Fit ``r`` (of ``det_cfg.repeats``) uses spec ``r mod len(specs)`` and seed
    ``det_cfg.seed + r``; the reported accuracy is the mean over fits.
    """
    specs = [specs] if isinstance(specs, ScenarioSpec) else list(specs)
    det_cfg = det_cfg or DetectorConfig()
    if not specs:
        raise ValueError("no scenario specs")
    if len({s.kind for s in specs}) != 1:
        raise ValueError("specs mix scenario kinds")
    repeats = max(det_cfg.repeats, len(specs))
    cache: dict[str, TrainState] = {}

    def state(path: str) -> TrainState:
        if path not in cache:
            cache[path] = load_checkpoint(path).eval()
        return cache[path]

    accs, fits = [], []
    for r in range(repeats):
        spec = specs[r % len(specs)]
        cfg = replace(det_cfg, seed=det_cfg.seed + r)
        per_ckpt = math.ceil(cfg.n_train / len(spec.train))
        covers, stegos = [], []
        for i, path in enumerate(spec.train):
            c, s = make_pairs(state(path), images, per_ckpt, seed=cfg.seed * 1000 + i)
            covers.append(c)
            stegos.append(s)
        cover_tr, stego_tr = torch.cat(covers), torch.cat(stegos)
        # test crops/messages come from a disjoint seed stream
        cover_te, stego_te = make_pairs(state(spec.test[0]), images, cfg.n_test, seed=cfg.seed * 1000 + 999)
        acc = detector_accuracy(train_detector(cover_tr, stego_tr, cfg), cover_te, stego_te)
        accs.append(acc)
        fits.append({"train_checkpoints": [Path(p).name for p in spec.train],
                     "test_checkpoint": Path(spec.test[0]).name, "accuracy": acc,
                     "train_pairs": len(cover_tr), "test_pairs": len(cover_te)})
    return {"scenario": specs[0].kind, "accuracy": float(np.mean(accs)), "fits": fits}


# -- checkpoint divergence -------------------------------------------------------

@torch.no_grad()
def checkpoint_divergence(ckpts: Sequence[str | Path | TrainState], probe: torch.Tensor, bits: np.ndarray) -> float:
    """Mean over checkpoint pairs of the mean absolute pixel difference of their stegos."""
    if len(ckpts) < 2:
        raise ValueError("need at least two checkpoints")
    states = [c if isinstance(c, TrainState) else load_checkpoint(c).eval() for c in ckpts]
    stegos = [embed(s, probe, bits) for s in states]
    return float(np.mean([(a - b).abs().mean().item() for a, b in combinations(stegos, 2)]))


# -- ablation --------------------------------------------------------------------

ABLATION = {
    "attention_only": dict(attention=True, filter_init="random"),
    "filters_only": dict(attention=False, filter_init="srm"),
    "both": dict(attention=True, filter_init="srm"),
}


def ablation_suite(base: TrainConfig, seeds: Sequence[int], eval_dir: str | Path,
                   n_trials: int = 50, out_root: str | Path | None = None) -> list[dict]:
    """Train each ablation config per seed and score it on held-out images."""
    images = ImageSet(eval_dir, base.crop_size)
    out_root = Path(out_root or base.out_dir)
    rows = []
    for name, change in ABLATION.items():
        accs = []
        for seed in seeds:
            cfg = base.replace(seed=seed, out_dir=str(out_root / f"{name}_s{seed}"), **change)
            state, _ = run_training(cfg)
            accs.append(bit_accuracy(state.eval(), images, n_trials, seed=10_000 + seed))
        rows.append({"config": name, "attention": change["attention"], "optimized_filters": change["filter_init"] == "srm",
                     "seeds": list(seeds), "bit_accuracy": accs, "mean": float(np.mean(accs))})
    return rows


def format_ablation(rows: list[dict]) -> str:
    lines = [f"{'config':<16}{'attention':>10}{'filters':>9}{'mean acc':>10}  per-seed"]
    for r in rows:
        per = " ".join(f"{a:.3f}" for a in r["bit_accuracy"])
        lines.append(f"{r['config']:<16}{'w/' if r['attention'] else 'w/o':>10}"
                     f"{'w/' if r['optimized_filters'] else 'w/o':>9}{r['mean']:>10.3f}  {per}")
    return "\n".join(lines)


# -- report ----------------------------------------------------------------------

@dataclass
class EvalReport:
    bit_accuracy: float | None = None
    bit_trials: int = 0
    msg_len: int = 0
    ssim_mean: float | None = None
    ssim_samples: int = 0
    detector: dict[str, dict] = field(default_factory=dict)
    divergence: float | None = None
    config: dict = field(default_factory=dict)
    full_scale_reference: dict = field(default_factory=lambda: FULL_SCALE_REFERENCE)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = []
        if self.bit_accuracy is not None:
            rows.append(f"bit accuracy      {self.bit_accuracy:.4f}  ({self.bit_trials} trials x {self.msg_len} bits)")
        if self.ssim_mean is not None:
            rows.append(f"stego/cover SSIM  {self.ssim_mean:.4f}  ({self.ssim_samples} pairs)")
        for kind, r in self.detector.items():
            fit = r["fits"][0]
            rows.append(f"detector {kind:<13}{r['accuracy']:.4f}  (mean of {len(r['fits'])} fits; "
                        f"train {fit['train_pairs']} / test {fit['test_pairs']} pairs per class)")
        if self.divergence is not None:
            rows.append(f"ckpt divergence   {self.divergence:.5f}  (mean |diff|, [-1,1] scale)")
        return "\n".join(rows)
