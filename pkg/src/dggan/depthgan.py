"""RGB -> depth translation networks and the adversarial losses."""

from __future__ import annotations

import torch
from torch import nn

from .errors import ShapeError

EPS = 1e-7


def _norm(kind, channels):
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    return nn.Identity()


class ResidualBlock(nn.Module):
    def __init__(self, channels, norm="instance"):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(norm, channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(norm, channels),
        )

    def forward(self, x):
        return torch.relu(x + self.body(x))


class Generator(nn.Module):
    """Encoder-decoder mapping ``B x 3 x H x W`` RGB to ``B x 1 x H x W`` depth in [0, 1].

    Each entry of ``channels`` adds one stride-2 conv block to the encoder and
    one stride-2 transposed-conv block to the decoder, so the output keeps the
    input resolution. The final 1x1 conv is squashed by a sigmoid.
    """

    def __init__(self, in_size=64, channels=(16, 32, 64, 64), residual_blocks=2, norm="instance"):
        super().__init__()
        channels = list(channels)
        if in_size % (2 ** len(channels)):
            raise ValueError(f"in_size {in_size} not divisible by 2**{len(channels)}")
        self.in_size = in_size
        self.channels = channels

        enc, prev = [], 3
        for c in channels:
            enc += [nn.Conv2d(prev, c, 4, stride=2, padding=1), _norm(norm, c), nn.LeakyReLU(0.2)]
            prev = c
        self.encoder = nn.Sequential(*enc)
        self.bottleneck = nn.Sequential(*[ResidualBlock(prev, norm) for _ in range(residual_blocks)])
        dec = []
        for c in channels[-2::-1] + [channels[0]]:
            dec += [nn.ConvTranspose2d(prev, c, 4, stride=2, padding=1), _norm(norm, c), nn.ReLU()]
            prev = c
        self.decoder = nn.Sequential(*dec)
        self.head = nn.Conv2d(prev, 1, 1)

    def forward(self, rgb):
        if rgb.dim() != 4 or rgb.shape[1] != 3 or tuple(rgb.shape[2:]) != (self.in_size, self.in_size):
            raise ShapeError(f"generator expects B x 3 x {self.in_size} x {self.in_size}, got {tuple(rgb.shape)}")
        return torch.sigmoid(self.head(self.decoder(self.bottleneck(self.encoder(rgb)))))


class Discriminator(nn.Module):
    """Whole-image realness score for a ``B x 1 x n x m`` depth map."""

    def __init__(self, in_size=64, channels=(16, 32, 64, 64)):
        super().__init__()
        layers, prev = [], 1
        for c in channels:
            layers += [nn.Conv2d(prev, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            prev = c
        self.in_size = in_size
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(prev, 1)

    def logits(self, depth):
        if depth.dim() != 4 or depth.shape[1] != 1 or tuple(depth.shape[2:]) != (self.in_size, self.in_size):
            raise ShapeError(f"discriminator expects B x 1 x {self.in_size} x {self.in_size}, "
                             f"got {tuple(depth.shape)}")
        return self.fc(self.pool(self.features(depth)).flatten(1)).squeeze(1)

    def forward(self, depth):
        return torch.sigmoid(self.logits(depth))


def build_generator(model_cfg) -> Generator:
    g = model_cfg.generator
    return Generator(model_cfg.input_size, g.channels, g.residual_blocks, g.norm)


def build_discriminator(model_cfg) -> Discriminator:
    return Discriminator(model_cfg.input_size, model_cfg.discriminator.channels)


def _safe_log(x, eps):
    return torch.log(torch.clamp(x, eps, 1.0 - eps))


def gan_loss_discriminator(real_scores, fake_scores, eps=EPS):
    """``E[log D(x_t)] + E[log(1 - D(G(x_s)))]``; the discriminator ascends it."""
    return _safe_log(real_scores, eps).mean() + _safe_log(1.0 - fake_scores, eps).mean()


def gan_loss_generator(fake_scores, variant="non_saturating", eps=EPS):
    """Generator-side objective, to be minimized.

    ``minimax`` is ``E[log(1 - D(G(x_s)))]``; ``non_saturating`` is
    ``E[-log D(G(x_s))]``.
    """
    if variant == "minimax":
        return _safe_log(1.0 - fake_scores, eps).mean()
    if variant == "non_saturating":
        return -_safe_log(fake_scores, eps).mean()
    raise ValueError(f"unknown generator loss variant {variant!r}")
