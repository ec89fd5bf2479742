"""Loss terms and the weighted discriminator / generator-encoder totals.

Adversarial terms use the Wasserstein critic form with a gradient penalty;
domain classification keeps the negative log-likelihood form.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Callable

import torch
import torch.nn.functional as F

from .config import LossWeights, RandomSource
from .errors import NumericError, ShapeError

REPORT_FIELDS = (
    "adv_d", "adv_g", "gp", "cls_real", "cls_fake",
    "cycle_image", "latent_l1", "kl", "total_d", "total_g",
)


@dataclass
class LossReport:
    adv_d: float = 0.0
    adv_g: float = 0.0
    gp: float = 0.0
    cls_real: float = 0.0
    cls_fake: float = 0.0
    cycle_image: float = 0.0
    latent_l1: float = 0.0
    kl: float = 0.0
    total_d: float = 0.0
    total_g: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    def to_line(self) -> str:
        """Comma-separated values in ``REPORT_FIELDS`` order, 6 decimals."""
        return ",".join(f"{getattr(self, name):.6f}" for name in REPORT_FIELDS)

    @classmethod
    def header(cls) -> str:
        return ",".join(REPORT_FIELDS)

    @classmethod
    def from_line(cls, line: str) -> "LossReport":
        values = [float(v) for v in line.strip().split(",")]
        if len(values) != len(REPORT_FIELDS):
            raise ValueError(f"expected {len(REPORT_FIELDS)} values, got {len(values)}")
        return cls(*values)

    def first_nonfinite(self) -> str | None:
        for f in fields(self):
            value = getattr(self, f.name)
            if value != value or value in (float("inf"), float("-inf")):
                return f.name
        return None


def adv_scores(real_scores: torch.Tensor, fake_scores: torch.Tensor):
    """Return ``(mean(real) - mean(fake), -mean(fake))``."""
    if not (torch.isfinite(real_scores).all() and torch.isfinite(fake_scores).all()):
        raise NumericError("non-finite critic scores")
    fake_mean = fake_scores.mean()
    return real_scores.mean() - fake_mean, -fake_mean


def _critic_scores(critic: Callable, x: torch.Tensor) -> torch.Tensor:
    out = critic(x)
    scores = out[0] if isinstance(out, tuple) else out
    return scores.reshape(scores.shape[0], -1).mean(dim=1)


def gradient_penalty(
    critic: Callable,
    real: torch.Tensor,
    fake: torch.Tensor,
    rng: RandomSource | None = None,
    alpha: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean over the batch of ``(||grad_x critic(x_hat)||_2 - 1)^2``.

    ``x_hat = alpha * real + (1 - alpha) * fake`` with one ``alpha ~ U[0, 1]`` per
    sample drawn from ``rng`` unless given. The critic output per image is the
    mean of its patch-score map. The graph is kept so the penalty can itself be
    differentiated with respect to the critic's parameters.
    """
    if real.shape != fake.shape:
        raise ShapeError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ in shape")
    if alpha is None:
        if rng is None:
            raise ValueError("either rng or alpha is required")
        alpha = rng.uniform((real.shape[0],), dtype=real.dtype)
    alpha = alpha.to(real.dtype).reshape(-1, *([1] * (real.dim() - 1)))
    with torch.enable_grad():
        x_hat = (alpha * real + (1 - alpha) * fake).detach().requires_grad_(True)
        scores = _critic_scores(critic, x_hat)
        grad = None
        if scores.requires_grad:
            (grad,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(x_hat)
    norms = grad.reshape(grad.shape[0], -1).norm(2, dim=1)
    return ((norms - 1) ** 2).mean()


def classification_loss(logits: torch.Tensor, target) -> torch.Tensor:
    """Negative log softmax probability of ``target``; batch-averaged for 2-d logits."""
    squeeze = logits.dim() == 1
    if squeeze:
        logits = logits[None]
    target = torch.as_tensor(target, dtype=torch.long).reshape(-1)
    if target.numel() == 1 and logits.shape[0] > 1:
        target = target.expand(logits.shape[0])
    k = logits.shape[-1]
    if int(target.min()) < 0 or int(target.max()) >= k:
        raise IndexError(f"target domain outside [0, {k})")
    return F.cross_entropy(logits, target)


def l1_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute element-wise difference."""
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def kl_to_prior(mu: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, I) || N(0, I)) = 0.5 * ||mu||^2, averaged over the batch."""
    mu = torch.as_tensor(mu)
    if mu.dim() == 1:
        mu = mu[None]
    return 0.5 * mu.pow(2).sum(dim=1).mean()


def total_d(adv_d, gp, cls_real, w: LossWeights):
    return -adv_d + w.lambda_gp * gp + w.lambda_cls_real * cls_real


def total_g(adv_g, cls_fake, cycle_image, latent_l1, kl, w: LossWeights):
    return (
        adv_g
        + w.lambda_cls * cls_fake
        + w.lambda_image * cycle_image
        + w.lambda_latent * latent_l1
        + w.lambda_kl * kl
    )


def discriminator_terms(G, D, x, c0, c, z, alpha) -> dict:
    """Terms of the discriminator objective for one batch.

    ``fake = G(x, z, c)`` is computed without tracking G's gradients.
    """
    with torch.no_grad():
        fake = G(x, c, z)
    real_scores, real_logits = D(x)
    fake_scores, _ = D(fake)
    adv_d, _ = adv_scores(real_scores, fake_scores)
    return {
        "adv_d": adv_d,
        "gp": gradient_penalty(D, x, fake, alpha=alpha),
        "cls_real": classification_loss(real_logits, c0),
    }


def generator_terms(G, E, D, x, c0, c, z, eta, cycle_latent: str = "encoded") -> dict:
    """Terms of the generator-encoder objective for one batch.

    The forward translation uses the prior sample ``z``; the reconstruction
    ``G(y', z_rec, c0)`` uses ``z_rec = E(x) + eta`` ("encoded") or ``z``
    itself ("forward").
    """
    y = G(x, c, z)
    fake_scores, fake_logits = D(y)
    mu = E(x)
    z_rec = mu + eta if cycle_latent == "encoded" else z
    x_rec = G(y, c0, z_rec)
    return {
        "adv_g": -fake_scores.mean(),
        "cls_fake": classification_loss(fake_logits, c),
        "cycle_image": l1_distance(x_rec, x),
        "latent_l1": l1_distance(E(y), z),
        "kl": kl_to_prior(mu),
    }
