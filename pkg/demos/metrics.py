"""
FID and diversity
=================

The Frechet distance between two domains, against the distance within one,
and the diversity score on a few extreme cases.
"""

import numpy as np
import torch

from injection.config import RandomSource
from injection.data import ToySpec, make_toy_dataset
from injection.metrics import (GaussianStats, RandomConvFeatures, diversity_score, fid,
                               frechet_distance)

# closed form check: identity against 4 * identity in 3-d gives 3
eye = GaussianStats(np.zeros(3), np.eye(3))
print(frechet_distance(eye, GaussianStats(np.zeros(3), 4 * np.eye(3))))

ds = make_toy_dataset(ToySpec(per_domain=400), RandomSource(0, "toy"))
a, b = torch.stack(ds.domain_images(0)), torch.stack(ds.domain_images(1))
fx = RandomConvFeatures()
print(fx.identifier)
print("within  ", fid(a[:200], a[200:], fx, n=200))
print("across  ", fid(a[:200], b[:200], fx, n=200))

# copies of one image have no diversity, distinct images do
print(diversity_score(a[:1].repeat(10, 1, 1, 1), fx, all_pairs=True))
print(diversity_score(a[:10], fx, all_pairs=True))
print(diversity_score(a, fx, num_pairs=1900, rng=RandomSource(0)))
