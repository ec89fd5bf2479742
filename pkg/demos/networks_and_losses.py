"""
Networks and loss terms
=======================

Build the three networks for a small config, run one batch through them
and print every loss term.
"""

import torch

from injection.config import LossWeights, ModelConfig, RandomSource
from injection.networks import build_discriminator, build_encoder, build_generator, inject
from injection.objectives import discriminator_terms, generator_terms, total_d, total_g

cfg = ModelConfig(image_size=32, num_domains=2, latent_dim=8, base_width=8, depth=3)
G = build_generator(cfg, RandomSource(0, "init/G"))
E = build_encoder(cfg, RandomSource(0, "init/E"))
D = build_discriminator(cfg, RandomSource(0, "init/D"))
for name, net in (("G", G), ("E", E), ("D", D)):
    print(name, sum(p.numel() for p in net.parameters()), "parameters")

rng = RandomSource(1)
x = rng.uniform((4, 3, 32, 32)) * 2 - 1
c0 = torch.tensor([0, 0, 1, 1])
c = 1 - c0
z = rng.normal((4, 8))

# the label and the code ride along as constant channels
print(inject(x, torch.eye(2)[c], z).shape)  # 3 + 2 + 8 channels

scores, logits = D(x)
print(scores.shape, logits.shape)  # patch map, one logit per domain

w = LossWeights()
d_terms = discriminator_terms(G, D, x, c0, c, z, alpha=rng.uniform((4, 1, 1, 1)))
g_terms = generator_terms(G, E, D, x, c0, c, z, eta=rng.normal((4, 8)))
for k, v in {**d_terms, **g_terms}.items():
    print(f"{k:12s} {v.item(): .5f}")
print("L_D  =", total_d(**d_terms, w=w).item())
print("L_GE =", total_g(**g_terms, w=w).item())
