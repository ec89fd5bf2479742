"""Generator, encoder and patch discriminator, plus label/latent injection.

The generator sees the image with the one-hot target label and the latent code
broadcast as constant channel maps, so one network covers every
(source domain, target domain, latent code) combination.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig, RandomSource
from .errors import ShapeError

RESNET_BLOCKS = 6


def _width(cfg: ModelConfig, level: int) -> int:
    return cfg.base_width * min(2 ** level, 8)


def _norm(channels: int) -> nn.InstanceNorm2d:
    return nn.InstanceNorm2d(channels, affine=True)


def init_parameters(module: nn.Module, rng: RandomSource) -> None:
    """Seeded re-initialisation: PyTorch's default Kaiming-uniform weights, zero biases, unit norm scales."""
    gen = rng.generator
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5), generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.InstanceNorm2d) and m.affine:
                m.weight.fill_(1.0)
                m.bias.zero_()


def as_one_hot(c: torch.Tensor, num_domains: int, dtype=torch.float32) -> torch.Tensor:
    """Accept either a (B,) index tensor or a (B, K) one-hot tensor."""
    if c.dim() == 1:
        if c.dtype.is_floating_point:
            raise ShapeError("a 1-d label tensor must hold integer domain indices")
        if len(c) and (int(c.min()) < 0 or int(c.max()) >= num_domains):
            raise IndexError(f"domain index outside [0, {num_domains})")
        return F.one_hot(c.long(), num_domains).to(dtype)
    if c.dim() != 2 or c.shape[1] != num_domains:
        raise ShapeError(f"expected labels of shape (B, {num_domains}), got {tuple(c.shape)}")
    return c.to(dtype)


def inject(image: torch.Tensor, c: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Concatenate spatially broadcast label and latent channels onto the image.

    Channel layout: ``[image | label (K) | latent (d)]``.
    """
    if image.dim() != 4 or c.dim() != 2 or z.dim() != 2:
        raise ShapeError("inject expects image (B,C,H,W), label (B,K) and latent (B,d)")
    b, _, h, w = image.shape
    if c.shape[0] != b or z.shape[0] != b:
        raise ShapeError(
            f"batch sizes disagree: image {b}, label {c.shape[0]}, latent {z.shape[0]}"
        )
    c = c.to(image.dtype)[:, :, None, None].expand(-1, -1, h, w)
    z = z.to(image.dtype)[:, :, None, None].expand(-1, -1, h, w)
    return torch.cat([image, c, z], dim=1)


def _check_image(cfg: ModelConfig, image: torch.Tensor) -> None:
    expected = (cfg.in_channels, cfg.image_size, cfg.image_size)
    if image.dim() != 4 or tuple(image.shape[1:]) != expected:
        raise ShapeError(f"expected images of shape (B, {expected}), got {tuple(image.shape)}")


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            _norm(channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, 1, 1),
            _norm(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Image translator ``G(x, z, c)`` with a U-Net or ResNet backbone.

    U-Net: a full-resolution stem, ``depth`` strided downsampling stages and
    ``depth`` transposed-conv upsampling stages; the input of every down stage
    is concatenated onto the output of its matching up stage.

    ResNet: stem, downsampling, residual blocks at the bottleneck, upsampling,
    with no skip connections (the StarGAN/CycleGAN translator layout).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = cfg.backbone
        in_ch = cfg.in_channels + cfg.num_domains + cfg.latent_dim
        L = cfg.depth
        if cfg.backbone == "unet":
            self.stem = nn.Sequential(nn.Conv2d(in_ch, _width(cfg, 0), 3, 1, 1), nn.LeakyReLU(0.2))
            self.downs = nn.ModuleList(
                nn.Sequential(
                    nn.Conv2d(_width(cfg, i - 1), _width(cfg, i), 4, 2, 1),
                    _norm(_width(cfg, i)),
                    nn.LeakyReLU(0.2),
                )
                for i in range(1, L + 1)
            )
            ups = []
            for i in range(L, 0, -1):
                up_in = _width(cfg, L) if i == L else 2 * _width(cfg, i)
                ups.append(
                    nn.Sequential(
                        nn.ConvTranspose2d(up_in, _width(cfg, i - 1), 4, 2, 1),
                        _norm(_width(cfg, i - 1)),
                        nn.ReLU(),
                    )
                )
            self.ups = nn.ModuleList(ups)
            self.head = nn.Conv2d(2 * _width(cfg, 0), cfg.in_channels, 3, 1, 1)
            self.num_skips = L
        else:
            self.stem = nn.Sequential(
                nn.Conv2d(in_ch, _width(cfg, 0), 7, 1, 3), _norm(_width(cfg, 0)), nn.ReLU()
            )
            self.downs = nn.ModuleList(
                nn.Sequential(
                    nn.Conv2d(_width(cfg, i - 1), _width(cfg, i), 4, 2, 1),
                    _norm(_width(cfg, i)),
                    nn.ReLU(),
                )
                for i in range(1, L + 1)
            )
            self.blocks = nn.Sequential(*(ResidualBlock(_width(cfg, L)) for _ in range(RESNET_BLOCKS)))
            self.ups = nn.ModuleList(
                nn.Sequential(
                    nn.ConvTranspose2d(_width(cfg, i), _width(cfg, i - 1), 4, 2, 1),
                    _norm(_width(cfg, i - 1)),
                    nn.ReLU(),
                )
                for i in range(L, 0, -1)
            )
            self.head = nn.Conv2d(_width(cfg, 0), cfg.in_channels, 7, 1, 3)
            self.num_skips = 0

    def forward(self, image, c, z):
        _check_image(self.cfg, image)
        c = as_one_hot(c, self.cfg.num_domains, image.dtype)
        if z.dim() != 2 or z.shape[1] != self.cfg.latent_dim:
            raise ShapeError(f"expected latent codes of shape (B, {self.cfg.latent_dim})")
        h = self.stem(inject(image, c, z))
        if self.backbone == "unet":
            feats = [h]
            for down in self.downs:
                h = down(h)
                feats.append(h)
            h = feats.pop()
            for up in self.ups:
                h = torch.cat([up(h), feats.pop()], dim=1)
        else:
            for down in self.downs:
                h = down(h)
            h = self.blocks(h)
            for up in self.ups:
                h = up(h)
        return torch.tanh(self.head(h))


class EncoderBlock(nn.Module):
    """Pre-activation residual downsampling block.

    The shortcut (average pool + 1x1 conv) carries per-channel means that the
    instance-normalised main path discards, so global colour survives.
    """

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.main = nn.Sequential(
            _norm(in_ch), nn.LeakyReLU(0.2), nn.Conv2d(in_ch, in_ch, 3, 1, 1),
            _norm(in_ch), nn.LeakyReLU(0.2), nn.Conv2d(in_ch, out_ch, 3, 1, 1),
            nn.AvgPool2d(2),
        )
        self.shortcut = nn.Sequential(nn.AvgPool2d(2), nn.Conv2d(in_ch, out_ch, 1))

    def forward(self, x):
        return self.main(x) + self.shortcut(x)


class Encoder(nn.Module):
    """Strided stem, residual downsampling blocks, global average pool, linear map to the mean."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        layers = [nn.Conv2d(cfg.in_channels, _width(cfg, 0), 4, 2, 1)]
        layers += [EncoderBlock(_width(cfg, i - 1), _width(cfg, i)) for i in range(1, cfg.depth)]
        layers.append(nn.LeakyReLU(0.2))
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(_width(cfg, cfg.depth - 1), cfg.latent_dim)

    def forward(self, image):
        _check_image(self.cfg, image)
        return self.fc(self.features(image).mean(dim=(2, 3)))


def discriminator_strides(cfg: ModelConfig) -> int:
    # keep the patch map at least 4x4
    return max(1, min(cfg.depth, int(math.log2(cfg.image_size)) - 2))


class Discriminator(nn.Module):
    """Patch critic with an auxiliary domain classifier.

    Both heads read the output of the last strided conv: the critic head maps it
    to one unbounded score per patch, the classifier head to ``K`` channels that
    are averaged over space into domain logits. No normalization layers.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        n = discriminator_strides(cfg)
        layers, ch = [], cfg.in_channels
        for i in range(n):
            layers += [nn.Conv2d(ch, _width(cfg, i), 4, 2, 1), nn.LeakyReLU(0.2)]
            ch = _width(cfg, i)
        self.trunk = nn.Sequential(*layers)
        self.critic = nn.Conv2d(ch, 1, 3, 1, 1)
        self.classifier = nn.Conv2d(ch, cfg.num_domains, 3, 1, 1)

    def forward(self, image):
        _check_image(self.cfg, image)
        h = self.trunk(image)
        return self.critic(h), self.classifier(h).mean(dim=(2, 3))


def build_generator(cfg: ModelConfig, rng: RandomSource) -> Generator:
    G = Generator(cfg.validate())
    init_parameters(G, rng)
    return G


def build_encoder(cfg: ModelConfig, rng: RandomSource) -> Encoder:
    E = Encoder(cfg.validate())
    init_parameters(E, rng)
    return E


def build_discriminator(cfg: ModelConfig, rng: RandomSource) -> Discriminator:
    D = Discriminator(cfg.validate())
    init_parameters(D, rng)
    return D


def generate(G: Generator, image, c, z):
    return G(image, c, z)


def encode(E: Encoder, image):
    return E(image)


def reparameterize(mu: torch.Tensor, rng: RandomSource) -> torch.Tensor:
    """Sample ``z = mu + eta`` with ``eta ~ N(0, I)``; gradients flow through ``mu`` only."""
    return mu + rng.normal(mu.shape, dtype=mu.dtype)


def discriminate(D: Discriminator, image):
    return D(image)
