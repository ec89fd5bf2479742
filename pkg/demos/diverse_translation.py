"""
Many outputs from one input
===========================

Train briefly, then translate one image to the other domain with eight
latent codes and save the row as a grid.
"""

import tempfile

import torch

from injection.config import LossWeights, ModelConfig, RandomSource, TrainConfig
from injection.data import ToySpec, make_toy_dataset, to_pil
from injection.metrics import RandomConvFeatures, diversity_score
from injection.trainer import sample_variants, train

model = ModelConfig(image_size=32, latent_dim=8, base_width=16, depth=3)
ds = make_toy_dataset(ToySpec(per_domain=64), RandomSource(0, "toy"))
state = train(model, LossWeights(), TrainConfig(epochs_constant=25, epochs_decay=0),
              ds, tempfile.mkdtemp(), checkpoint_every=25)

x = ds.domain_images(0)[0][None]
variants = sample_variants(state.G, x, target=1, n_variants=8, rng=RandomSource(0, "z"))[0]
print(variants.shape)

# how far apart the outputs sit in feature space
print("diversity", diversity_score(variants, RandomConvFeatures(), all_pairs=True))

row = torch.cat([x[0], *variants], dim=2)  # input, then the variants, side by side
to_pil(row).save("variants.png")
