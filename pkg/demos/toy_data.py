"""
Toy domains and augmentation
============================

Two synthetic domains, a look at their mean colours, and one augmented batch.
"""

import torch

from injection.config import ModelConfig, RandomSource
from injection.data import ToySpec, make_toy_dataset, sample_batch, to_pil

spec = ToySpec(num_domains=3, per_domain=64, image_size=32)
ds = make_toy_dataset(spec, RandomSource(0, "toy"))
print(ds.names, ds.sizes)

# each domain has its own hue, so the mean colour already tells them apart
for k in range(ds.num_domains):
    mean = torch.stack(ds.domain_images(k)).mean(dim=(0, 2, 3))
    print(ds.names[k], [round(v, 3) for v in mean.tolist()])

# a training batch: flipped, resized and cropped images with random target labels
cfg = ModelConfig(image_size=32, num_domains=3, base_width=8, depth=3)
batch = sample_batch(ds, 8, RandomSource(0, "data"), cfg)
print(batch.images.shape, batch.labels.tolist(), batch.targets.tolist())

# same seed, same batch
again = sample_batch(ds, 8, RandomSource(0, "data"), cfg)
print(torch.equal(batch.images, again.images))

to_pil(ds.domain_images(2)[0]).save("toy_domain2.png")
