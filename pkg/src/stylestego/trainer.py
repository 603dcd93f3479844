"""Alternating adversarial training of the hiding network and extractor."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint, codec
from .config import TrainConfig, dump_config
from .data import ImageSet
from .extractor import ExtractorNet, secret_loss
from .stylizer import (Discriminator, HidingNet, content_loss, discriminator_loss,
                       generator_style_loss, total_loss)
from .substrate import Adam

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "loss_d", "loss_g_style", "l_c", "l_m", "bit_acc")
MAX_CONSECUTIVE_SKIPS = 10
# Run-local paths are left out of checkpoints so identical runs in different
# directories produce identical files.
_UNSNAPSHOTTED = ("content_dir", "style_dir", "out_dir")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainState:
    cfg: TrainConfig
    hiding: HidingNet
    disc: Discriminator
    extractor: ExtractorNet
    opt_g: Adam
    opt_d: Adam
    rng: np.random.Generator
    step: int = 0
    pinned: np.ndarray | None = None
    skips: int = field(default=0, repr=False)

    @property
    def grid(self) -> codec.Grid:
        return self.hiding.grid

    def eval(self) -> "TrainState":
        for m in (self.hiding, self.disc, self.extractor):
            m.eval()
        return self


def build_state(cfg: TrainConfig) -> TrainState:
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    hiding = HidingNet(cfg)
    disc = Discriminator(cfg.resolved_disc_layers, cfg.disc_width, cfg.slope)
    extractor = ExtractorNet(cfg)
    gen_params = [(f"hiding.{n}", p) for n, p in hiding.named_parameters()]
    gen_params += [(f"extractor.{n}", p) for n, p in extractor.named_parameters()]
    betas = (cfg.beta1, cfg.beta2)
    opt_g = Adam(gen_params, cfg.lr, betas)
    opt_d = Adam([(f"disc.{n}", p) for n, p in disc.named_parameters()], cfg.lr, betas)
    rng = np.random.default_rng(cfg.seed)
    state = TrainState(cfg, hiding, disc, extractor, opt_g, opt_d, rng)
    if cfg.overfit:
        state.pinned = codec.random_bits(np.random.default_rng([cfg.seed, 1]), cfg.msg_len)
    return state


def next_message(state: TrainState, batch: int) -> np.ndarray:
    if state.pinned is not None:
        return np.tile(state.pinned, (batch, 1))
    return codec.random_bits(state.rng, state.cfg.msg_len, batch)


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def train_step(state: TrainState, content: torch.Tensor, style: torch.Tensor,
               bits: np.ndarray) -> dict[str, float]:
    """One discriminator update followed by one joint generator/extractor update."""
    cfg = state.cfg
    secret = codec.map_bits(bits, state.grid, cfg.key)
    hiding, disc, ext = state.hiding, state.disc, state.extractor

    latent = hiding.encode(content)
    stego = hiding.generate_stego(latent, hiding.bound_secret(content, secret))

    _set_requires_grad(disc, True)
    state.opt_d.zero_grad()
    loss_d = discriminator_loss(disc(style), disc(stego.detach()))

    _set_requires_grad(disc, False)
    loss_g = generator_style_loss(disc(stego))
    l_c = content_loss(latent, hiding.encode(stego))
    raw = ext(stego)
    l_m = secret_loss(secret, raw, cfg.delta_tol)
    total = total_loss(cfg.lam, loss_g, l_c, cfg.mu, l_m)
    _set_requires_grad(disc, True)

    decoded = codec.decide_bits(raw, cfg.key, bits.shape[-1])
    metrics = {
        "step": state.step + 1,
        "loss_d": loss_d.item(),
        "loss_g_style": loss_g.item(),
        "l_c": l_c.item(),
        "l_m": l_m.item(),
        "bit_acc": float((decoded == bits).mean()),
    }
    if not all(math.isfinite(metrics[k]) for k in METRIC_FIELDS[1:]):
        return _skip(state, metrics, "non-finite loss")

    loss_d.backward()
    if not state.opt_d.grads_finite():
        return _skip(state, metrics, "non-finite discriminator gradient")
    state.opt_g.zero_grad()
    total.backward()
    if not state.opt_g.grads_finite():
        return _skip(state, metrics, "non-finite generator gradient")
    state.opt_d.step()
    state.opt_g.step()
    state.opt_d.zero_grad()
    state.opt_g.zero_grad()
    state.step += 1
    state.skips = 0
    return metrics


def _skip(state: TrainState, metrics: dict, why: str) -> dict:
    state.opt_d.zero_grad()
    state.opt_g.zero_grad()
    state.skips += 1
    log.warning("step %d skipped: %s", state.step + 1, why)
    if state.skips >= MAX_CONSECUTIVE_SKIPS:
        raise TrainingDiverged(f"{state.skips} consecutive skipped steps (last: {why}); "
                               f"try a lower lr or a larger delta_tol")
    metrics = dict(metrics, skipped=True)
    return metrics


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    cfg = state.cfg
    snapshot = {k: v for k, v in cfg.to_dict().items() if k not in _UNSNAPSHOTTED}
    header = {
        "arch": cfg.arch(),
        "config": snapshot,
        "step": state.step,
        "opt_g_step": state.opt_g.step_count,
        "opt_d_step": state.opt_d.step_count,
        "rng": state.rng.bit_generator.state,
        "pinned": None if state.pinned is None else state.pinned.tolist(),
    }
    checkpoint.write(path, header, _tensors(state))


def _tensors(state: TrainState) -> list[tuple[str, torch.Tensor]]:
    out = [(f"hiding.{n}", p) for n, p in state.hiding.named_parameters()]
    out += [(f"disc.{n}", p) for n, p in state.disc.named_parameters()]
    out += [(f"extractor.{n}", p) for n, p in state.extractor.named_parameters()]
    out += [(f"opt_g.{n}", t) for n, t in state.opt_g.state_tensors()]
    out += [(f"opt_d.{n}", t) for n, t in state.opt_d.state_tensors()]
    return out


def load_checkpoint(path: str | Path, expect: TrainConfig | None = None) -> TrainState:
    """Rebuild the full training state; refuses architectures that differ from ``expect``."""
    header, tensors = checkpoint.read(path)
    cfg = TrainConfig.from_dict(header["config"])
    if cfg.arch() != header["arch"]:
        raise checkpoint.IntegrityError("architecture block disagrees with config snapshot")
    if expect is not None and expect.arch() != header["arch"]:
        diff = sorted(k for k, v in expect.arch().items() if header["arch"].get(k) != v)
        raise checkpoint.ArchitectureMismatch(f"checkpoint architecture differs in: {', '.join(diff)}")
    state = build_state(cfg)
    want = _tensors(state)
    names = [n for n, _ in want]
    if names != [e["name"] for e in header["tensors"]]:
        raise checkpoint.ArchitectureMismatch("checkpoint tensor list does not match this architecture")
    with torch.no_grad():
        for name, t in want:
            src = tensors[name]
            if src.shape != t.shape:
                raise checkpoint.ArchitectureMismatch(f"{name}: shape {tuple(src.shape)} vs {tuple(t.shape)}")
            t.copy_(src)
    state.step = header["step"]
    state.opt_g.step_count = header["opt_g_step"]
    state.opt_d.step_count = header["opt_d_step"]
    state.rng.bit_generator.state = header["rng"]
    state.pinned = None if header["pinned"] is None else np.asarray(header["pinned"], dtype=np.uint8)
    return state


def checkpoint_path(out_dir: str | Path, step: int | None = None) -> Path:
    return Path(out_dir) / ("final.ckpt" if step is None else f"step_{step:06d}.ckpt")


def run_training(cfg: TrainConfig, progress_every: int = 0) -> tuple[TrainState, list[dict]]:
    """Train for ``cfg.iterations`` steps, writing metrics.csv and checkpoints to ``cfg.out_dir``."""
    content = ImageSet(cfg.content_dir, cfg.crop_size)
    style = ImageSet(cfg.style_dir, cfg.crop_size)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    state = build_state(cfg)
    rows: list[dict] = []
    t0 = time.perf_counter()
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        writer.writeheader()
        while state.step < cfg.iterations:
            c = content.sample(state.rng, cfg.batch)
            s = style.sample(state.rng, cfg.batch)
            bits = next_message(state, cfg.batch)
            m = train_step(state, c, s, bits)
            if m.get("skipped"):
                continue
            rows.append(m)
            writer.writerow(m)
            if cfg.save_every and state.step % cfg.save_every == 0 and state.step < cfg.iterations:
                save_checkpoint(state, checkpoint_path(out, state.step))
            if progress_every and state.step % progress_every == 0:
                recent = rows[-progress_every:]
                log.info("step %d  loss_d %.3f  l_m %.4f  bit_acc %.3f  (%.1fs)", state.step,
                         np.mean([r["loss_d"] for r in recent]), np.mean([r["l_m"] for r in recent]),
                         np.mean([r["bit_acc"] for r in recent]), time.perf_counter() - t0)
    if cfg.save_every and cfg.iterations % cfg.save_every == 0:
        save_checkpoint(state, checkpoint_path(out, state.step))
    save_checkpoint(state, checkpoint_path(out))
    return state, rows
