"""Training configuration and its ``key = value`` file format.

Example file::

    # lines starting with '#' are comments
    content_dir = data/content
    style_dir = data/style
    iterations = 5000
    enc_widths = 32,32,64,128,256
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

# Fields that fix parameter shapes; a checkpoint refuses to load into a model
# built with different values.
ARCH_FIELDS = (
    "crop_size", "enc_widths", "msg_channels", "n_res", "dec_widths", "disc_layers",
    "disc_width", "ext_widths", "reduction", "head_widths", "slope",
    "attention", "filter_init",
)


@dataclass
class TrainConfig:
    content_dir: str = "data/toy/content"
    style_dir: str = "data/toy/style"
    out_dir: str = "runs/default"
    crop_size: int = 64
    iterations: int = 5000
    batch: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lam: float = 1.0  # style (adversarial) weight
    mu: float = 1.0  # secret-loss weight
    delta_tol: float = 0.05
    slope: float = 0.2
    reduction: int = 8
    msg_len: int = 64
    seed: int = 0
    key: int = 1234  # stego key: seeds the bit-to-cell permutation
    overfit: bool = False  # pin one message for the whole run
    save_every: int = 0  # 0 -> only the final checkpoint
    threads: int = 1
    enc_widths: tuple[int, ...] = (32, 32, 64, 128, 256)
    msg_channels: int = 128
    n_res: int = 9
    dec_widths: tuple[int, ...] = (128, 64, 32, 32)
    disc_layers: int = 0  # 0 -> 4 below 128px, 7 otherwise
    disc_width: int = 32
    ext_widths: tuple[int, ...] = (64, 64, 128, 128)
    head_widths: tuple[int, ...] = (32, 64, 64)
    attention: bool = True
    filter_init: str = "srm"

    def __post_init__(self) -> None:
        for name in ("enc_widths", "dec_widths", "ext_widths", "head_widths"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.crop_size % 16:
            raise ValueError(f"crop_size must be divisible by 16, got {self.crop_size}")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.batch <= 0:
            raise ValueError("batch must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if min(self.lam, self.mu) <= 0:
            raise ValueError("loss weights lam and mu must be positive")
        if self.delta_tol < 0:
            raise ValueError("delta_tol must be non-negative")
        if len(self.enc_widths) != 5:
            raise ValueError("enc_widths needs 5 entries (1 stride-1 + 4 stride-2 layers)")
        if len(self.dec_widths) != 4:
            raise ValueError("dec_widths needs 4 entries (one per upsampling block)")
        if len(self.ext_widths) != 4:
            raise ValueError("ext_widths needs 4 entries (one per stride-2 stage)")
        if len(self.head_widths) != 3:
            raise ValueError("head_widths needs 3 entries (hidden widths of the 4-conv head)")
        if self.filter_init not in ("srm", "random"):
            raise ValueError(f"filter_init must be 'srm' or 'random', got {self.filter_init!r}")
        if self.msg_len <= 0:
            raise ValueError("msg_len must be positive")
        grid = self.grid_capacity
        if self.msg_len > grid:
            raise ValueError(f"msg_len {self.msg_len} exceeds grid capacity {grid}")

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        s = self.crop_size // 16
        return (self.msg_channels, s, s)

    @property
    def grid_capacity(self) -> int:
        c, h, w = self.grid_shape
        return c * h * w

    @property
    def resolved_disc_layers(self) -> int:
        if self.disc_layers:
            return self.disc_layers
        return 4 if self.crop_size < 128 else 7

    def arch(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in ARCH_FIELDS}
        d["disc_layers"] = self.resolved_disc_layers
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def replace(self, **changes: Any) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**{k: coerce(k, v) for k, v in d.items()})


def coerce(key: str, value: Any) -> Any:
    """Convert a string (or JSON value) to the type of ``TrainConfig.<key>``."""
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    if key not in defaults:
        raise ValueError(f"unknown config key {key!r}")
    default = defaults[key]
    if not isinstance(value, str):
        return tuple(value) if isinstance(default, tuple) else value
    value = value.strip()
    if isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | Path | None = None, **overrides: Any) -> TrainConfig:
    d: dict[str, Any] = parse_kv(Path(path).read_text()) if path else {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d)


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# Small-width preset sized for a single CPU core; see README.  The higher lr
# and secret weight get the message path off chance within ~1k steps.
TOY = dict(
    lr=1e-3,
    mu=5.0,
    enc_widths=(16, 16, 32, 64, 64),
    msg_channels=16,
    dec_widths=(64, 32, 16, 16),
    disc_width=16,
    ext_widths=(32, 32, 64, 64),
    head_widths=(32, 32, 32),
    reduction=8,
)


def toy_config(**overrides: Any) -> TrainConfig:
    d: dict[str, Any] = dict(TOY)
    d.update(overrides)
    return TrainConfig(**d)
