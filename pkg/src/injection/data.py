"""Folder-per-domain datasets, augmentation, label encoding and a synthetic toy dataset."""

from __future__ import annotations

import colorsys
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .config import ModelConfig, RandomSource
from .errors import DatasetError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
SHAPES = ("circle", "square", "triangle")
RESIZE_RATIO = 138 / 128


@dataclass
class Dataset:
    """Unpaired images grouped by domain; domain ``k`` is ``domains[k]``."""

    domains: list  # list of (name, list of (C, H, W) float tensors in [-1, 1])
    image_size: int

    def __post_init__(self):
        if len(self.domains) < 2:
            raise DatasetError(f"need at least 2 domains, got {len(self.domains)}")
        self.images = [img for _, imgs in self.domains for img in imgs]
        self.labels = torch.tensor(
            [k for k, (_, imgs) in enumerate(self.domains) for _ in imgs], dtype=torch.long
        )

    @property
    def num_domains(self) -> int:
        return len(self.domains)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.domains]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(imgs) for _, imgs in self.domains)

    def __len__(self):
        return len(self.images)

    def domain_images(self, k: int) -> list[torch.Tensor]:
        return self.domains[k][1]


class Batch(NamedTuple):
    images: torch.Tensor
    labels: torch.Tensor  # true domain c0
    targets: torch.Tensor  # random target domain c


def to_tensor(img: Image.Image, channels: int) -> torch.Tensor:
    img = img.convert("L" if channels == 1 else "RGB")
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def to_pil(image: torch.Tensor) -> Image.Image:
    arr = ((image.detach().clamp(-1, 1).cpu().numpy() + 1.0) * 127.5).round().astype(np.uint8)
    arr = arr.transpose(1, 2, 0)
    return Image.fromarray(arr[:, :, 0] if arr.shape[2] == 1 else arr)


def load_folders(root, cfg: ModelConfig) -> Dataset:
    """One domain per subdirectory of ``root``, indexed in lexicographic order."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    domains = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        images = []
        for path in sorted(sub.iterdir()):
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                with Image.open(path) as img:
                    images.append(to_tensor(img, cfg.in_channels))
            except (UnidentifiedImageError, OSError) as exc:
                raise DatasetError(f"cannot decode image {path}: {exc}") from exc
        if images:
            domains.append((sub.name, images))
    if len(domains) < 2:
        raise DatasetError(f"{root} holds {len(domains)} domain folder(s) with images; need >= 2")
    return Dataset(domains, cfg.image_size)


def resize_size(image_size: int) -> int:
    """Pre-crop side length, ``image_size * 138 / 128`` rounded half up."""
    return int(math.floor(image_size * RESIZE_RATIO + 0.5))


def _resize(image: torch.Tensor, size: int) -> torch.Tensor:
    if tuple(image.shape[-2:]) == (size, size):
        return image
    out = F.interpolate(image[None], size=(size, size), mode="bilinear", align_corners=False, antialias=True)
    return out[0].clamp(-1, 1)


def augment(image: torch.Tensor, rng: RandomSource, cfg: ModelConfig) -> torch.Tensor:
    """Resize to ``resize_size``, crop ``image_size`` uniformly at random, flip with p=0.5."""
    big = resize_size(cfg.image_size)
    image = _resize(image, big)
    top, left = (int(v) for v in rng.randint(big - cfg.image_size + 1, (2,)))
    image = image[:, top:top + cfg.image_size, left:left + cfg.image_size]
    if rng.random() < 0.5:
        image = image.flip(-1)
    return image.contiguous()


def preprocess_eval(image: torch.Tensor, cfg: ModelConfig) -> torch.Tensor:
    """Deterministic counterpart of ``augment``: same resize, center crop, no flip."""
    big = resize_size(cfg.image_size)
    image = _resize(image, big)
    off = (big - cfg.image_size) // 2
    return image[:, off:off + cfg.image_size, off:off + cfg.image_size].contiguous()


def encode_label(index: int, num_domains: int) -> torch.Tensor:
    if not 0 <= index < num_domains:
        raise IndexError(f"domain index {index} outside [0, {num_domains})")
    label = torch.zeros(num_domains)
    label[index] = 1.0
    return label


def sample_batch(ds: Dataset, n: int, rng: RandomSource, cfg: ModelConfig | None = None) -> Batch:
    """Draw ``n`` augmented images uniformly (with replacement) and uniform target labels."""
    if len(ds) == 0:
        raise DatasetError("cannot sample from an empty dataset")
    if n < 1:
        raise ValueError("batch size must be >= 1")
    if cfg is None:
        cfg = ModelConfig(image_size=ds.image_size, in_channels=ds.images[0].shape[0],
                          num_domains=ds.num_domains, depth=1)
    idx = rng.randint(len(ds), (n,))
    images = torch.stack([augment(ds.images[i], rng, cfg) for i in idx.tolist()])
    targets = rng.randint(ds.num_domains, (n,))
    return Batch(images, ds.labels[idx], targets)


@dataclass(frozen=True)
class ToySpec:
    """Synthetic multi-domain data: shapes drawn with a per-domain palette and stripe texture.

    Domain ``k`` uses hue ``k / K`` for a dark saturated background and a light
    pastel foreground, with diagonal stripes at ``3 + 3k`` cycles per image.
    Shape, position, size, stripe phase and a small colour jitter vary per
    sample. One hue per domain keeps the mean colour linearly separable.
    """

    num_domains: int = 2
    per_domain: int = 32
    image_size: int = 32
    shapes: tuple = SHAPES
    color_jitter: float = 0.06

    def palette(self, k: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
        hue = k / self.num_domains
        bg = colorsys.hsv_to_rgb(hue, 0.7, 0.55)
        fg = colorsys.hsv_to_rgb(hue, 0.35, 0.95)
        return bg, fg

    def stripe_frequency(self, k: int) -> float:
        return 3.0 + 3.0 * k


def _render(spec: ToySpec, k: int, u: Sequence[float]) -> np.ndarray:
    """Render one RGB image in [0, 1] from 9 uniform draws."""
    s = spec.image_size
    shape = spec.shapes[min(int(u[0] * len(spec.shapes)), len(spec.shapes) - 1)]
    radius = s * (0.18 + 0.14 * u[1])
    cx = radius + (s - 2 * radius) * u[2]
    cy = radius + (s - 2 * radius) * u[3]
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5
    dx, dy = xx - cx, yy - cy
    if shape == "circle":
        mask = dx ** 2 + dy ** 2 <= radius ** 2
    elif shape == "square":
        mask = (np.abs(dx) <= radius * 0.85) & (np.abs(dy) <= radius * 0.85)
    else:
        # upward triangle: below the two slanted edges, above the base
        mask = (dy <= radius * 0.8) & (dy >= -radius + 2 * np.abs(dx))
    bg, fg = (np.array(c) for c in spec.palette(k))
    jitter = spec.color_jitter * (np.array(u[4:7]) * 2 - 1)
    bg, fg = np.clip(bg + jitter, 0, 1), np.clip(fg + jitter, 0, 1)
    phase = 2 * np.pi * u[7]
    stripes = np.sin(2 * np.pi * spec.stripe_frequency(k) * (xx + yy) / (2 * s) + phase) >= 0
    shade = np.where(stripes, 1.0, 0.6)[:, :, None]
    img = np.where(mask[:, :, None], fg[None, None, :] * shade, bg[None, None, :])
    return np.clip(img, 0, 1)


def make_toy_dataset(spec: ToySpec, rng: RandomSource) -> Dataset:
    if spec.num_domains < 2:
        raise DatasetError("a toy dataset needs at least 2 domains")
    domains = []
    for k in range(spec.num_domains):
        draws = rng.uniform((spec.per_domain, 9), dtype=torch.float64).numpy()
        images = []
        for u in draws:
            img = _render(spec, k, u).astype(np.float32) * 2 - 1
            images.append(torch.from_numpy(img.transpose(2, 0, 1).copy()))
        domains.append((f"domain{k}", images))
    return Dataset(domains, spec.image_size)


def write_dataset(ds: Dataset, out_dir, manifest: dict | None = None) -> dict:
    """Write ``<out>/<domain>/<index>.png`` plus ``manifest.json``; returns the manifest."""
    out_dir = Path(out_dir)
    files = {}
    for name, images in ds.domains:
        sub = out_dir / name
        sub.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(images):
            path = sub / f"{i:05d}.png"
            to_pil(img).save(path, format="PNG")
            files[f"{name}/{path.name}"] = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = dict(manifest or {})
    manifest["counts"] = dict(zip(ds.names, ds.sizes))
    manifest["files"] = files
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def write_toy_dataset(spec: ToySpec, seed: int, out_dir) -> dict:
    ds = make_toy_dataset(spec, RandomSource(seed, "toy"))
    spec_dict = asdict(spec)
    spec_dict["shapes"] = list(spec.shapes)
    return write_dataset(ds, out_dir, {"toy_spec": spec_dict, "seed": seed})
