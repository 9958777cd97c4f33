from typing import List

import torch
import torch.nn as nn

from app.exceptions import ConfigError, ContractError
from app.nets.layers import (
    GradientReversal,
    downsampling_plan,
    scaled_widths,
    upsampling_plan,
    weights_init,
)
from app.schemas import ArchDescriptor

UP_WIDTHS = [512, 256, 128, 64]
DOWN_WIDTHS = [64, 128, 256, 512]
DISC_WIDTHS = [64, 128, 256, 512, 512]


def _up_block(in_ch: int, out_ch: int, plan, last: bool) -> List[nn.Module]:
    k, s, p = plan
    layers: List[nn.Module] = [nn.ConvTranspose2d(in_ch, out_ch, k, s, p, bias=last)]
    if last:
        layers.append(nn.Tanh())
    else:
        layers += [nn.BatchNorm2d(out_ch), nn.ReLU(True)]
    return layers


def _down_block(in_ch: int, out_ch: int, plan, norm: bool = True) -> List[nn.Module]:
    k, s, p = plan
    layers: List[nn.Module] = [nn.Conv2d(in_ch, out_ch, k, s, p, bias=not norm)]
    if norm:
        layers.append(nn.BatchNorm2d(out_ch))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return layers


class SurrogateRenderer(nn.Module):
    """e: parameter vector -> image. Five transposed convs, tanh output."""

    def __init__(self, in_dim: int, channels: int, resolution: int, width_multiplier: float):
        super().__init__()
        self.in_dim, self.channels = in_dim, channels
        self.resolution, self.width_multiplier = resolution, width_multiplier
        self.widths = scaled_widths(UP_WIDTHS, width_multiplier) + [channels]
        plan = upsampling_plan(resolution, len(self.widths))

        layers: List[nn.Module] = []
        prev = in_dim
        for i, (width, step) in enumerate(zip(self.widths, plan)):
            layers += _up_block(prev, width, step, last=i == len(self.widths) - 1)
            prev = width
        self.main = nn.Sequential(*layers)

    def forward(self, params):
        if params.dim() != 2 or params.shape[1] != self.in_dim:
            raise ContractError(f"Surrogate expects (B, {self.in_dim}) inputs, got {tuple(params.shape)}")
        return self.main(params.view(params.shape[0], self.in_dim, 1, 1))

    def descriptor(self) -> ArchDescriptor:
        return ArchDescriptor(
            kind="surrogate", in_dim=self.in_dim, channels=self.channels,
            resolution=self.resolution, width_multiplier=self.width_multiplier,
        )


class GeneratorNet(nn.Module):
    """
    g: embedding -> image. Upscaling transposed convs in the odd blocks,
    1x1 convs in the even blocks when pointwise is on (9 blocks total).
    """

    def __init__(self, in_dim: int, channels: int, resolution: int, width_multiplier: float, pointwise: bool = True):
        super().__init__()
        self.in_dim, self.channels = in_dim, channels
        self.resolution, self.width_multiplier, self.pointwise = resolution, width_multiplier, pointwise
        widths = scaled_widths(UP_WIDTHS, width_multiplier) + [channels]
        plan = upsampling_plan(resolution, len(widths))

        layers: List[nn.Module] = []
        prev = in_dim
        for i, (width, step) in enumerate(zip(widths, plan)):
            last = i == len(widths) - 1
            layers += _up_block(prev, width, step, last=last)
            if pointwise and not last:
                layers += [nn.Conv2d(width, width, 1, 1, 0, bias=False), nn.BatchNorm2d(width), nn.ReLU(True)]
            prev = width
        self.main = nn.Sequential(*layers)

    def forward(self, z):
        z = z.flatten(1)
        if z.shape[1] != self.in_dim:
            raise ContractError(f"Generator expects {self.in_dim}-d inputs, got {z.shape[1]}")
        return self.main(z.view(z.shape[0], self.in_dim, 1, 1))

    def descriptor(self) -> ArchDescriptor:
        return ArchDescriptor(
            kind="generator", in_dim=self.in_dim, channels=self.channels,
            resolution=self.resolution, width_multiplier=self.width_multiplier,
            options={"pointwise": self.pointwise},
        )


class _DownStack(nn.Module):
    """Conv stack collapsing the image to a 1x1 map with out_dim channels."""

    def __init__(self, channels: int, resolution: int, out_dim: int, width_multiplier: float, base: List[int]):
        super().__init__()
        self.channels, self.resolution = channels, resolution
        self.out_dim, self.width_multiplier = out_dim, width_multiplier
        widths = scaled_widths(base, width_multiplier) + [out_dim]
        plan, _ = downsampling_plan(resolution, len(widths), collapse=True)

        layers: List[nn.Module] = []
        prev = channels
        for i, (width, step) in enumerate(zip(widths, plan)):
            if i == len(widths) - 1:
                k, s, p = step
                layers.append(nn.Conv2d(prev, width, k, s, p, bias=True))
            else:
                layers += _down_block(prev, width, step)
            prev = width
        self.main = nn.Sequential(*layers)

    def _check(self, x):
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.channels, self.resolution, self.resolution):
            raise ContractError(
                f"Expected (B, {self.channels}, {self.resolution}, {self.resolution}) images, got {tuple(x.shape)}"
            )


class ParamRegressor(_DownStack):
    """c: image -> parameter vector in [-1, 1]. Five convs, tanh head."""

    def __init__(self, channels: int, resolution: int, out_dim: int, width_multiplier: float):
        super().__init__(channels, resolution, out_dim, width_multiplier, DOWN_WIDTHS)

    def forward(self, x):
        self._check(x)
        return torch.tanh(self.main(x).flatten(1))

    def descriptor(self) -> ArchDescriptor:
        return ArchDescriptor(
            kind="regressor", out_dim=self.out_dim, channels=self.channels,
            resolution=self.resolution, width_multiplier=self.width_multiplier,
        )


class Discriminator(_DownStack):
    """d: image -> probability of being a real engine render. Six convs."""

    def __init__(self, channels: int, resolution: int, width_multiplier: float):
        super().__init__(channels, resolution, 1, width_multiplier, DISC_WIDTHS)

    def forward(self, x):
        self._check(x)
        return torch.sigmoid(self.main(x).flatten())

    def descriptor(self) -> ArchDescriptor:
        return ArchDescriptor(
            kind="discriminator", out_dim=1, channels=self.channels,
            resolution=self.resolution, width_multiplier=self.width_multiplier,
        )


class FeatureNet(nn.Module):
    """
    f / f_eval: identity classifier whose penultimate layer is the embedding.
    The embedding is tanh-bounded, so its norm never exceeds sqrt(embed_dim).
    """

    def __init__(self, channels: int, resolution: int, embed_dim: int, n_classes: int, width_multiplier: float):
        super().__init__()
        if n_classes < 2:
            raise ConfigError("A feature map needs at least 2 identity classes")
        self.channels, self.resolution = channels, resolution
        self.embed_dim, self.n_classes, self.width_multiplier = embed_dim, n_classes, width_multiplier
        widths = scaled_widths(DOWN_WIDTHS, width_multiplier)
        plan, size = downsampling_plan(resolution, len(widths), collapse=False)

        layers: List[nn.Module] = []
        prev = channels
        for width, step in zip(widths, plan):
            layers += _down_block(prev, width, step)
            prev = width
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev * size * size, embed_dim)
        self.classifier = nn.Linear(embed_dim, n_classes)

    def embed(self, x):
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.channels, self.resolution, self.resolution):
            raise ContractError(f"Feature map expects ({self.channels}, {self.resolution}, {self.resolution}) images")
        return torch.tanh(self.head(self.features(x).flatten(1)))

    def classify(self, x):
        return self.classifier(self.embed(x))

    def forward(self, x):
        return self.embed(x)

    def descriptor(self) -> ArchDescriptor:
        return ArchDescriptor(
            kind="feature", out_dim=self.embed_dim, channels=self.channels,
            resolution=self.resolution, width_multiplier=self.width_multiplier,
            options={"n_classes": self.n_classes},
        )


class IdentityFeature(nn.Module):
    """f for the polygon experiment: the noise vector is its own embedding."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def embed(self, x):
        return x.flatten(1)

    def forward(self, x):
        return self.embed(x)

    def descriptor(self) -> ArchDescriptor:
        return ArchDescriptor(kind="identity", in_dim=self.dim, out_dim=self.dim)


class DannNets(nn.Module):
    """
    p: 4 convs (the last stride 1, no norm or activation), flattened.
    l: 3 fully connected layers with tanh head.
    d_adv: gradient reversal, then 2 fully connected layers with sigmoid head.
    """

    def __init__(self, channels: int, resolution: int, out_dim: int, width_multiplier: float, reversal_weight: float = 1.0):
        super().__init__()
        self.channels, self.resolution = channels, resolution
        self.out_dim, self.width_multiplier = out_dim, width_multiplier
        widths = scaled_widths(DOWN_WIDTHS, width_multiplier)
        plan, size = downsampling_plan(resolution, len(widths) - 1, collapse=False)

        layers: List[nn.Module] = []
        prev = channels
        for width, step in zip(widths[:-1], plan):
            layers += _down_block(prev, width, step)
            prev = width
        layers.append(nn.Conv2d(prev, widths[-1], 3, 1, 1))
        self.p = nn.Sequential(*layers, nn.Flatten())
        flat = widths[-1] * size * size

        h1, h2 = scaled_widths([1024, 512], width_multiplier)
        self.l = nn.Sequential(
            nn.Linear(flat, h1), nn.BatchNorm1d(h1), nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(h1, h2), nn.BatchNorm1d(h2), nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(h2, out_dim), nn.Tanh(),
        )
        self.reversal = GradientReversal(reversal_weight)
        (hd,) = scaled_widths([512], width_multiplier)
        self.d_adv = nn.Sequential(
            nn.Linear(flat, hd), nn.BatchNorm1d(hd), nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hd, 1), nn.Sigmoid(),
        )

    @property
    def reversal_weight(self) -> float:
        return self.reversal.weight

    def features(self, x):
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.channels, self.resolution, self.resolution):
            raise ContractError(f"DANN expects ({self.channels}, {self.resolution}, {self.resolution}) images")
        return self.p(x)

    def domain(self, feats):
        return self.d_adv(self.reversal(feats)).flatten()

    def forward(self, x):
        """Prediction path l(p(x))"""
        return self.l(self.features(x))

    def descriptor(self) -> ArchDescriptor:
        return ArchDescriptor(
            kind="dann", out_dim=self.out_dim, channels=self.channels,
            resolution=self.resolution, width_multiplier=self.width_multiplier,
            options={"reversal_weight": self.reversal_weight},
        )


def build_from_descriptor(desc: ArchDescriptor) -> nn.Module:
    """Rebuild an (uninitialized) network from its descriptor"""
    if desc.kind == "surrogate":
        return SurrogateRenderer(desc.in_dim, desc.channels, desc.resolution, desc.width_multiplier)
    if desc.kind == "generator":
        return GeneratorNet(
            desc.in_dim, desc.channels, desc.resolution, desc.width_multiplier, desc.options.get("pointwise", True)
        )
    if desc.kind == "regressor":
        return ParamRegressor(desc.channels, desc.resolution, desc.out_dim, desc.width_multiplier)
    if desc.kind == "discriminator":
        return Discriminator(desc.channels, desc.resolution, desc.width_multiplier)
    if desc.kind == "feature":
        return FeatureNet(desc.channels, desc.resolution, desc.out_dim, desc.options["n_classes"], desc.width_multiplier)
    if desc.kind == "identity":
        return IdentityFeature(desc.in_dim)
    if desc.kind == "dann":
        return DannNets(
            desc.channels, desc.resolution, desc.out_dim, desc.width_multiplier, desc.options.get("reversal_weight", 1.0)
        )
    raise ConfigError(f"Unknown network kind '{desc.kind}'")


def build_initialized(desc: ArchDescriptor, seed: int) -> nn.Module:
    """Descriptor + seed -> freshly initialized network (same seed, same weights)."""
    generator_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        net = build_from_descriptor(desc)
        net.apply(weights_init)
    finally:
        torch.random.set_rng_state(generator_state)
    return net
