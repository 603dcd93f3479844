"""Image I/O, random crops and the procedurally generated toy datasets."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw, ImageFilter, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"}
LOSSLESS_SUFFIXES = {".png"}


class ImageDecodeError(ValueError):
    pass


def load_image(path: str | Path) -> np.ndarray:
    """``H x W x 3`` float32 in ``[-1, 1]``."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, UnidentifiedImageError, SyntaxError) as e:
        raise ImageDecodeError(f"cannot decode image {path}: {e}") from e
    return arr / 127.5 - 1.0


def quantize(img: np.ndarray) -> np.ndarray:
    """``[-1, 1]`` float image -> uint8."""
    return np.clip(np.rint((np.asarray(img) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def save_png(path: str | Path, img) -> None:
    path = Path(path)
    if path.suffix.lower() not in LOSSLESS_SUFFIXES:
        raise ValueError(f"refusing lossy or unknown output format {path.suffix!r}; use .png")
    if isinstance(img, torch.Tensor):
        img = to_hwc(img)
    Image.fromarray(quantize(img), mode="RGB").save(path, format="PNG")


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """``H x W x 3`` array -> ``1 x 3 x H x W`` float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.asarray(img, dtype=np.float32).transpose(2, 0, 1)))[None]


def to_hwc(t: torch.Tensor) -> np.ndarray:
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ValueError("to_hwc expects a single image")
        t = t[0]
    return t.detach().cpu().numpy().transpose(1, 2, 0)


def list_images(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


class ImageSet:
    """All images of a directory held in memory, sampled as random square crops."""

    def __init__(self, directory: str | Path, crop_size: int):
        self.crop_size = crop_size
        self.paths: list[Path] = []
        self.images: list[np.ndarray] = []
        for p in list_images(directory):
            try:
                img = load_image(p)
            except ImageDecodeError as e:
                log.warning("skipping unreadable image: %s", e)
                continue
            if min(img.shape[:2]) < crop_size:
                log.warning("skipping %s: %dx%d is smaller than crop size %d",
                            p, img.shape[0], img.shape[1], crop_size)
                continue
            self.paths.append(p)
            self.images.append(img)
        if not self.images:
            raise ValueError(f"no usable images of at least {crop_size}px in {directory}")

    def __len__(self) -> int:
        return len(self.images)

    def sample(self, rng: np.random.Generator, n: int) -> torch.Tensor:
        c = self.crop_size
        out = np.empty((n, c, c, 3), dtype=np.float32)
        for i in range(n):
            img = self.images[rng.integers(len(self.images))]
            y = rng.integers(img.shape[0] - c + 1)
            x = rng.integers(img.shape[1] - c + 1)
            out[i] = img[y:y + c, x:x + c]
        return torch.from_numpy(out.transpose(0, 3, 1, 2).copy())


# -- procedural toy data ------------------------------------------------------

def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size))


def _smooth_noise(rng: np.random.Generator, size: int, scale: int) -> np.ndarray:
    small = rng.random((max(2, size // scale), max(2, size // scale)))
    im = Image.fromarray((small * 255).astype(np.uint8)).resize((size, size), Image.BICUBIC)
    return np.asarray(im, dtype=np.float32) / 255.0


def _content_image(kind: int, rng: np.random.Generator, size: int) -> np.ndarray:
    x, y = _grid(size)
    tint = rng.uniform(0.3, 1.0, 3)
    if kind == 0:
        th = rng.uniform(0, np.pi)
        f = rng.uniform(4, 12)
        base = 0.5 + 0.5 * np.sin(2 * np.pi * f * (x * np.cos(th) + y * np.sin(th)))
    elif kind == 1:
        n = rng.integers(4, 10)
        base = ((np.floor(x * n) + np.floor(y * n)) % 2).astype(np.float32)
        base = 0.2 + 0.6 * base
    elif kind == 2:
        cx, cy = rng.uniform(0.3, 0.7, 2)
        r = np.hypot(x - cx, y - cy)
        base = 0.5 + 0.5 * np.cos(2 * np.pi * rng.uniform(5, 12) * r)
    elif kind == 3:
        base = _smooth_noise(rng, size, 8)
    elif kind == 4:
        base = _smooth_noise(rng, size, 3) * 0.6 + 0.4 * x
    elif kind == 5:
        img = Image.new("L", (size, size), int(rng.integers(30, 90)))
        draw = ImageDraw.Draw(img)
        for _ in range(12):
            cx, cy, r = rng.integers(0, size, 2).tolist() + [int(rng.integers(4, size // 4))]
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=int(rng.integers(100, 255)))
        base = np.asarray(img, dtype=np.float32) / 255.0
    elif kind == 6:
        img = Image.new("L", (size, size), 128)
        draw = ImageDraw.Draw(img)
        for _ in range(10):
            x0, y0 = rng.integers(0, size, 2)
            w, h = rng.integers(6, size // 2, 2)
            draw.rectangle([int(x0), int(y0), int(x0 + w), int(y0 + h)], fill=int(rng.integers(0, 255)))
        base = np.asarray(img, dtype=np.float32) / 255.0
    else:
        base = 0.5 + 0.25 * np.sin(12 * x + 3 * np.sin(8 * y)) + 0.25 * (_smooth_noise(rng, size, 16) - 0.5)
    chroma = np.stack([_smooth_noise(rng, size, 24) for _ in range(3)], axis=-1)
    rgb = base[..., None] * tint * (0.7 + 0.3 * chroma)
    return np.clip(rgb, 0, 1)


def _style_image(kind: int, rng: np.random.Generator, size: int) -> np.ndarray:
    palette = rng.integers(0, 256, size=(5, 3))
    base = tuple(int(v) for v in palette[0])
    img = Image.new("RGB", (size, size), base)
    draw = ImageDraw.Draw(img)
    n = 400 + 200 * kind
    angle = rng.uniform(0, np.pi)
    for _ in range(n):
        cx, cy = rng.uniform(0, size, 2)
        a = angle + rng.normal(0, 0.4 + 0.3 * kind)
        length = rng.uniform(3, 10 + 4 * kind)
        dx, dy = np.cos(a) * length, np.sin(a) * length
        color = tuple(int(v) for v in np.clip(palette[rng.integers(1, 5)] + rng.normal(0, 20, 3), 0, 255))
        draw.line([cx - dx, cy - dy, cx + dx, cy + dy], fill=color, width=int(rng.integers(1, 4)))
    img = img.filter(ImageFilter.SMOOTH)
    return np.asarray(img, dtype=np.float32) / 255.0


def make_toy_datasets(root: str | Path, seed: int = 0, n_content: int = 8, n_style: int = 4,
                      n_heldout: int = 8, size: int = 96) -> dict[str, Path]:
    """Write ``content/``, ``style/`` and ``heldout/`` PNG folders under ``root``.

    Held-out images come from the same texture families with different
    random draws.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    dirs = {name: root / name for name in ("content", "style", "heldout")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    for i in range(n_content):
        Image.fromarray((_content_image(i % 8, rng, size) * 255).astype(np.uint8)).save(
            dirs["content"] / f"content_{i:02d}.png")
    for i in range(n_style):
        Image.fromarray((_style_image(i % 4, rng, size) * 255).astype(np.uint8)).save(
            dirs["style"] / f"style_{i:02d}.png")
    for i in range(n_heldout):
        Image.fromarray((_content_image(i % 8, rng, size) * 255).astype(np.uint8)).save(
            dirs["heldout"] / f"heldout_{i:02d}.png")
    return dirs
