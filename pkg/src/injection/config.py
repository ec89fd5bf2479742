"""Configuration schema, key=value config files, LR schedule and seeded random streams."""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigError, ValidationError

BACKBONES = ("unet", "resnet")
CYCLE_LATENTS = ("encoded", "forward")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 128
    in_channels: int = 3
    num_domains: int = 2
    latent_dim: int = 8
    backbone: str = "unet"
    base_width: int = 64
    depth: int = 4

    def validate(self) -> "ModelConfig":
        if self.num_domains < 2:
            raise ValidationError(f"num_domains must be >= 2, got {self.num_domains}")
        if self.latent_dim < 1:
            raise ValidationError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.in_channels < 1 or self.base_width < 1 or self.depth < 1:
            raise ValidationError("in_channels, base_width and depth must be >= 1")
        if self.backbone not in BACKBONES:
            raise ValidationError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.image_size < 1 or self.image_size % (2 ** self.depth):
            raise ValidationError(
                f"image_size={self.image_size} is not divisible by 2**depth={2 ** self.depth}"
            )
        return self


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 2.5
    lambda_cls_real: float = 2.5
    lambda_image: float = 1.0
    lambda_latent: float = 10.0
    lambda_kl: float = 0.5
    lambda_gp: float = 5.0

    def validate(self) -> "LossWeights":
        for f in fields(self):
            value = getattr(self, f.name)
            if not value >= 0 or not math.isfinite(value):
                raise ValidationError(f"{f.name} must be a finite non-negative number, got {value}")
        return self


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    base_lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs_constant: int = 100
    epochs_decay: int = 100
    g_steps_per_d_step: int = 5
    seed: int = 0
    # "encoded": reconstruct with reparameterize(E(x)); "forward": reuse the forward z
    cycle_latent: str = "encoded"
    # give the discriminator the extra steps instead of the generator
    invert_update_ratio: bool = False

    @property
    def total_epochs(self) -> int:
        return self.epochs_constant + self.epochs_decay

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ValidationError(f"{name} must lie in [0, 1), got {value}")
        if not self.base_lr >= 0:
            raise ValidationError(f"base_lr must be >= 0, got {self.base_lr}")
        if self.epochs_constant < 0 or self.epochs_decay < 0 or self.total_epochs < 1:
            raise ValidationError("epochs_constant and epochs_decay must be >= 0 with a positive sum")
        if self.g_steps_per_d_step < 1:
            raise ValidationError("g_steps_per_d_step must be >= 1")
        if self.cycle_latent not in CYCLE_LATENTS:
            raise ValidationError(f"cycle_latent must be one of {CYCLE_LATENTS}")
        return self


_SECTIONS = (ModelConfig, LossWeights, TrainConfig)
CONFIG_KEYS = tuple(f.name for cls in _SECTIONS for f in fields(cls))


def _parse_value(key: str, raw: str, kind):
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}", key=key) from None


def parse_config(text: str) -> tuple[ModelConfig, LossWeights, TrainConfig]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}", key=line)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", key=key)
        values[key] = raw
    return build_config(values)


def build_config(overrides: dict) -> tuple[ModelConfig, LossWeights, TrainConfig]:
    """Build a validated config triple from a mapping of (possibly string) overrides."""
    out = []
    for cls in _SECTIONS:
        kwargs = {}
        for f in fields(cls):
            if f.name not in overrides:
                continue
            raw = overrides[f.name]
            kind = f.type if isinstance(raw, str) else None
            kwargs[f.name] = _parse_value(f.name, raw, kind) if kind else raw
        out.append(cls(**kwargs).validate())
    return tuple(out)


def load_config(path) -> tuple[ModelConfig, LossWeights, TrainConfig]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text)


def dump_config(model: ModelConfig, weights: LossWeights, train: TrainConfig) -> str:
    lines = []
    for section in (model, weights, train):
        for f in fields(section):
            value = getattr(section, f.name)
            lines.append(f"{f.name} = {value!r}" if isinstance(value, float) else f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_dict(model: ModelConfig, weights: LossWeights, train: TrainConfig) -> dict:
    return {**dataclasses.asdict(model), **dataclasses.asdict(weights), **dataclasses.asdict(train)}


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Constant ``base_lr`` for ``epochs_constant`` epochs, then linear decay to zero.

    During decay, epoch ``e`` gets ``base_lr * (1 - (e - epochs_constant + 1) / epochs_decay)``,
    so the final epoch runs at 0.
    """
    if not 0 <= epoch < cfg.total_epochs:
        raise IndexError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    if epoch < cfg.epochs_constant:
        return cfg.base_lr
    return cfg.base_lr * (1.0 - (epoch - cfg.epochs_constant + 1) / cfg.epochs_decay)


class RandomSource:
    """A named, seeded random stream.

    Two sources built from the same ``(seed, stream)`` produce identical draws.
    """

    def __init__(self, seed: int, stream: str = "default"):
        self.seed = int(seed)
        self.stream = str(stream)
        key = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(self.stream.encode())])
        self.generator = torch.Generator(device="cpu")
        self.generator.manual_seed(int(key.generate_state(1, dtype=np.uint64)[0] >> 1))

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream={self.stream!r})"

    def normal(self, shape: Sequence[int], dtype=torch.float32) -> torch.Tensor:
        return torch.randn(tuple(shape), generator=self.generator, dtype=dtype)

    def uniform(self, shape: Sequence[int], dtype=torch.float32) -> torch.Tensor:
        return torch.rand(tuple(shape), generator=self.generator, dtype=dtype)

    def randint(self, high: int, shape: Sequence[int]) -> torch.Tensor:
        return torch.randint(high, tuple(shape), generator=self.generator)

    def random(self) -> float:
        return float(torch.rand((), generator=self.generator, dtype=torch.float64))

    def get_state(self) -> torch.Tensor:
        return self.generator.get_state()

    def set_state(self, state: torch.Tensor) -> None:
        self.generator.set_state(state)

    def child(self, stream: str) -> "RandomSource":
        """A new stream of the same seed, named ``<this stream>/<stream>``."""
        return RandomSource(self.seed, f"{self.stream}/{stream}")
