"""Shared test oracles: central finite differences and tiny configurations."""

import mpmath
import numpy as np
import torch

from injection.config import LossWeights, ModelConfig, RandomSource, TrainConfig
from injection.networks import build_discriminator, build_encoder, build_generator

# the downscaled float64 setting used for every gradient check
GRAD_CFG = ModelConfig(image_size=8, in_channels=3, num_domains=2, latent_dim=4,
                       backbone="unet", base_width=4, depth=2)
FD_STEP = 1e-5
REL_FLOOR = 1e-6


def tiny_nets(cfg=GRAD_CFG, seed=0, dtype=torch.float64):
    G = build_generator(cfg, RandomSource(seed, "G")).to(dtype)
    E = build_encoder(cfg, RandomSource(seed, "E")).to(dtype)
    D = build_discriminator(cfg, RandomSource(seed, "D")).to(dtype)
    return G, E, D


def central_differences(fn, params, step=FD_STEP):
    """Numerical gradient of the scalar ``fn()`` w.r.t. every entry of ``params``."""
    grads = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            g = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = float(fn())
                flat[i] = orig - step
                down = float(fn())
                flat[i] = orig
                g[i] = (up - down) / (2 * step)
            grads.append(g.view_as(p))
    return grads


def analytic_gradients(fn, params):
    value = fn()
    grads = torch.autograd.grad(value, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(params, grads)]


def max_relative_error(analytic, numeric, floor=REL_FLOOR):
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor))
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


def toy_train_config(**overrides):
    base = dict(batch_size=16, base_lr=1e-4, epochs_constant=2, epochs_decay=0, seed=7)
    base.update(overrides)
    return TrainConfig(**base)


TOY_MODEL = ModelConfig(image_size=32, in_channels=3, num_domains=2, latent_dim=8,
                        backbone="unet", base_width=16, depth=3)
DEFAULT_WEIGHTS = LossWeights()


def differences_multi(fn, params, step=FD_STEP):
    """Central differences of a vector-valued ``fn()``; one ``(m, *p.shape)`` tensor per param."""
    out = []
    with torch.no_grad():
        m = fn().numel()
        for p in params:
            flat = p.view(-1)
            g = torch.zeros(m, flat.numel(), dtype=torch.float64)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = fn().detach().double()
                flat[i] = orig - step
                down = fn().detach().double()
                flat[i] = orig
                g[:, i] = (up - down) / (2 * step)
            out.append(g.view(m, *p.shape))
    return out


def loss_term_gradient_errors(seed=0):
    """Max relative error between autograd and central differences for every loss term.

    Discriminator terms are checked against D's parameters with the fake batch
    held fixed (the generator is not trained through them); generator/encoder
    terms against every parameter of G, E and D.
    """
    from injection.objectives import (
        adv_scores, classification_loss, gradient_penalty, generator_terms,
    )

    G, E, D = tiny_nets(seed=seed)
    rng = RandomSource(seed, "gradcheck")
    n, cfg = 2, GRAD_CFG
    x = (rng.uniform((n, cfg.in_channels, cfg.image_size, cfg.image_size)) * 2 - 1).double()
    c0 = torch.tensor([0, 1])
    c = torch.tensor([1, 1])
    z = rng.normal((n, cfg.latent_dim)).double()
    eta = rng.normal((n, cfg.latent_dim)).double()
    alpha = rng.uniform((n,)).double()
    with torch.no_grad():
        fake = G(x, c, z)

    def d_terms():
        real_scores, real_logits = D(x)
        fake_scores, _ = D(fake)
        adv_d, _ = adv_scores(real_scores, fake_scores)
        return torch.stack([
            adv_d, gradient_penalty(D, x, fake, alpha=alpha), classification_loss(real_logits, c0),
        ])

    g_names = ("adv_g", "cls_fake", "cycle_image", "latent_l1", "kl")

    def g_terms():
        terms = generator_terms(G, E, D, x, c0, c, z, eta)
        return torch.stack([terms[k] for k in g_names])

    errors = {}
    for names, fn, params in [
        (("adv_d", "gp", "cls_real"), d_terms, list(D.parameters())),
        (g_names, g_terms, [*G.parameters(), *E.parameters(), *D.parameters()]),
    ]:
        numeric = differences_multi(fn, params)
        for row, name in enumerate(names):
            analytic = analytic_gradients(lambda: fn()[row], params)
            errors[name] = max_relative_error(analytic, [g[row] for g in numeric])
    return errors


def random_spd(rng, f=4):
    b = rng.standard_normal((f, f))
    return b @ b.T + 0.1 * np.eye(f)


def frechet_oracle(mu_a, cov_a, mu_b, cov_b, dps=40):
    """Tr sqrt(A B) from the eigenvalues of the (non-symmetric) product at high precision."""
    with mpmath.workdps(dps):
        A, B = mpmath.matrix(cov_a.tolist()), mpmath.matrix(cov_b.tolist())
        eigenvalues, _ = mpmath.eig(A * B)
        tr_sqrt = sum(mpmath.sqrt(mpmath.re(e)) for e in eigenvalues)
        diff = mpmath.matrix((mu_a - mu_b).tolist())
        value = (diff.T * diff)[0] + sum(A[i, i] + B[i, i] for i in range(A.rows)) - 2 * tr_sqrt
        return float(value)
