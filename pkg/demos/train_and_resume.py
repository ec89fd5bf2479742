"""
Training, checkpoints and resume
================================

A short run on the toy data, then the same run split in two with a resume
in between. Both end with byte-identical checkpoints.
"""

import tempfile
from pathlib import Path

from injection.config import LossWeights, ModelConfig, RandomSource, TrainConfig, lr_at_epoch
from injection.data import ToySpec, make_toy_dataset
from injection.trainer import train

model = ModelConfig(image_size=32, latent_dim=8, base_width=8, depth=3)
weights = LossWeights()
schedule = TrainConfig(batch_size=16, epochs_constant=2, epochs_decay=2, seed=0)
ds = make_toy_dataset(ToySpec(per_domain=32), RandomSource(1, "toy"))

# constant learning rate, then a linear ramp to zero
print([lr_at_epoch(schedule, e) for e in range(schedule.total_epochs)])

out = Path(tempfile.mkdtemp())
state = train(model, weights, schedule, ds, out / "full")
print(state.step, "steps:", state.g_steps, "generator and", state.d_steps, "discriminator updates")
print((out / "full" / "train_log.csv").read_text().splitlines()[:3])

# stop after epoch 1, then pick up from its checkpoint
train(model, weights, TrainConfig(**{**vars(schedule), "epochs_constant": 1, "epochs_decay": 0}),
      ds, out / "half")
train(model, weights, schedule, ds, out / "resumed", resume=out / "half" / "ckpt_epoch0001.pt")

last = "ckpt_epoch0004.pt"
print((out / "full" / last).read_bytes() == (out / "resumed" / last).read_bytes())
