"""Fréchet distance between feature Gaussians (FID protocol) and pairwise feature diversity.

Both metrics run on a pluggable feature extractor: any callable mapping an
image batch to an ``(N, f)`` array that also carries an ``identifier``.
The default is a frozen, fixed-seed random convolutional network.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .config import RandomSource
from .errors import ShapeError, StatisticsError

FID_DEFAULT_N = 10_000
DIVERSITY_DEFAULT_PAIRS = 1_900
ALL_PAIRS_LIMIT = 200


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


class RandomConvFeatures(nn.Module):
    """Frozen random conv net; features are per-channel spatial means and stds.

    Works on any image size. Weights are drawn from a fixed seed, so the
    identifier pins the exact map.
    """

    def __init__(self, in_channels: int = 3, dim: int = 64, seed: int = 0):
        super().__init__()
        if dim < 2 or dim % 2:
            raise ValueError("feature dimension must be an even number >= 2")
        self.identifier = f"randconv-v1-c{in_channels}-f{dim}-s{seed}"
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, 32, 3, 1, 1), nn.ReLU(), nn.AvgPool2d(2, ceil_mode=True),
            nn.Conv2d(32, 64, 3, 1, 1), nn.ReLU(), nn.AvgPool2d(2, ceil_mode=True),
            nn.Conv2d(64, dim // 2, 3, 1, 1),
        )
        gen = RandomSource(seed, "feature-extractor").generator
        with torch.no_grad():
            for m in self.net:
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight, generator=gen)
                    m.bias.zero_()
        self.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, images: torch.Tensor) -> torch.Tensor:
        h = self.net(images.float())
        return torch.cat([h.mean(dim=(2, 3)), h.std(dim=(2, 3), unbiased=False)], dim=1)

    def __call__(self, images) -> np.ndarray:
        return super().__call__(_stack(images)).double().numpy()


_EXTRACTORS: dict[str, Callable[..., Callable]] = {"randconv": RandomConvFeatures}


def register_extractor(name: str, factory: Callable[..., Callable]) -> None:
    """Make an external extractor (e.g. a pretrained network) available by name."""
    _EXTRACTORS[name] = factory


def get_extractor(name: str = "randconv", **kwargs) -> Callable:
    try:
        factory = _EXTRACTORS[name]
    except KeyError:
        raise KeyError(f"unknown feature extractor {name!r}; known: {sorted(_EXTRACTORS)}") from None
    return factory(**kwargs)


def _stack(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        return images
    return torch.stack(list(images))


def extract(fx: Callable, images, chunk: int = 256) -> np.ndarray:
    """Features for all images, computed in fixed-order chunks."""
    images = _stack(images)
    parts = [np.asarray(fx(images[i:i + chunk]), dtype=np.float64) for i in range(0, len(images), chunk)]
    feats = np.concatenate(parts, axis=0)
    if not np.isfinite(feats).all():
        raise StatisticsError("feature extractor produced non-finite values")
    return feats


def fit_gaussian(features) -> GaussianStats:
    """Sample mean and unbiased (n - 1) covariance."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise StatisticsError("need at least 2 feature vectors to fit a Gaussian")
    cov = np.cov(x, rowvar=False, ddof=1)
    return GaussianStats(x.mean(axis=0), np.atleast_2d((cov + cov.T) / 2))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """``||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``, clamped at 0.

    The trace of ``(S_a S_b)^(1/2)`` is taken as the trace of the square root of
    the symmetric matrix ``S_a^(1/2) S_b S_a^(1/2)``, which has the same
    eigenvalues; negative eigenvalues from round-off are clamped to 0.
    """
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    root_a = _psd_sqrt(a.cov)
    middle = root_a @ b.cov @ root_a
    eig = np.linalg.eigvalsh((middle + middle.T) / 2)
    tr_covmean = np.sqrt(np.clip(eig, 0, None)).sum()
    diff = a.mean - b.mean
    value = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * tr_covmean
    return float(max(value, 0.0))


def pick_indices(n_avail: int, n: int, rng: RandomSource | None, replace: bool) -> np.ndarray:
    if n > n_avail and not replace:
        raise StatisticsError(f"requested {n} samples from a set of {n_avail} without replacement")
    if n == n_avail and not replace:
        return np.arange(n)
    if rng is None:
        raise ValueError("subsampling needs an rng")
    if replace:
        return rng.randint(n_avail, (n,)).numpy()
    return torch.randperm(n_avail, generator=rng.generator)[:n].numpy()


def fid(real, fake, fx: Callable, n: int = FID_DEFAULT_N, rng: RandomSource | None = None,
        replace: bool = False) -> float:
    """Fréchet distance between feature Gaussians of ``n`` real and ``n`` fake images.

    When ``n`` equals a set's size (and ``replace`` is off) the whole set is used
    as is; otherwise ``n`` images are drawn from ``rng``.
    """
    real, fake = _stack(real), _stack(fake)
    if len(real) == 0 or len(fake) == 0:
        raise StatisticsError("both image sets must be non-empty")
    real = real[torch.from_numpy(pick_indices(len(real), n, rng, replace))]
    fake = fake[torch.from_numpy(pick_indices(len(fake), n, rng, replace))]
    return frechet_distance(fit_gaussian(extract(fx, real)), fit_gaussian(extract(fx, fake)))


def fid_from_features(real_features: np.ndarray, fake_features: np.ndarray, n: int,
                      rng: RandomSource | None = None, replace: bool = False) -> float:
    """Like ``fid`` on precomputed features; ``n`` real rows are drawn, fakes are used whole."""
    real_features = np.asarray(real_features, dtype=np.float64)
    picked = real_features[pick_indices(len(real_features), n, rng, replace)]
    return frechet_distance(fit_gaussian(picked), fit_gaussian(fake_features))


def _unit(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    return features / np.where(norms > 0, norms, 1.0)


def pair_distances(features: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    f = _unit(np.asarray(features, dtype=np.float64))
    return np.linalg.norm(f[pairs[:, 0]] - f[pairs[:, 1]], axis=1)


def sample_pairs(n: int, num_pairs: int, rng: RandomSource) -> np.ndarray:
    """Index pairs, distinct within a pair, drawn with replacement across pairs."""
    first = rng.randint(n, (num_pairs,))
    second = rng.randint(n - 1, (num_pairs,))
    second = second + (second >= first).long()
    return torch.stack([first, second], dim=1).numpy()


def diversity_score(samples, fx: Callable, num_pairs: int = DIVERSITY_DEFAULT_PAIRS,
                    rng: RandomSource | None = None, all_pairs: bool = False) -> float:
    """Mean Euclidean distance between unit-normalised features of sample pairs.

    With ``all_pairs`` every unordered pair is used (sets of at most 200);
    otherwise ``num_pairs`` random pairs are drawn from ``rng``.
    """
    features = extract(fx, samples)
    n = features.shape[0]
    if n < 2:
        raise StatisticsError("diversity needs at least 2 samples")
    if all_pairs:
        if n > ALL_PAIRS_LIMIT:
            raise StatisticsError(f"all-pairs diversity is limited to {ALL_PAIRS_LIMIT} samples")
        pairs = np.array(np.triu_indices(n, k=1)).T
    else:
        if rng is None:
            raise ValueError("sampled-pair diversity needs an rng")
        pairs = sample_pairs(n, num_pairs, rng)
    return float(pair_distances(features, pairs).mean())


@dataclass
class MetricRecord:
    extractor: str
    n: int
    num_pairs: int
    seed: int
    fid: float
    diversity: float
    source: str = ""
    target: str = ""


def append_report(path, records: Sequence[MetricRecord]) -> None:
    """Append records to a CSV report, writing the header on first use."""
    path = Path(path)
    names = [f.name for f in fields(MetricRecord)]
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        if new:
            writer.writeheader()
        for rec in records:
            row = asdict(rec)
            row["fid"] = f"{rec.fid:.6f}"
            row["diversity"] = f"{rec.diversity:.6f}"
            writer.writerow(row)


def read_report(path) -> list[MetricRecord]:
    with Path(path).open(newline="") as fh:
        return [
            MetricRecord(
                extractor=row["extractor"], n=int(row["n"]), num_pairs=int(row["num_pairs"]),
                seed=int(row["seed"]), fid=float(row["fid"]), diversity=float(row["diversity"]),
                source=row["source"], target=row["target"],
            )
            for row in csv.DictReader(fh)
        ]


def is_finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)
