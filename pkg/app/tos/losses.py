"""
Loss terms of tied output synthesis.

Pixel distances are means over elements so that the term weights do not
depend on the resolution; the embedding distance is a per-sample sum of
squares averaged over the batch.
"""
from typing import Callable, Tuple

import torch

LOG_CLAMP = 1e-7

Net = Callable[[torch.Tensor], torch.Tensor]


def pixel_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return ((a - b) ** 2).mean()


def loss_le(g_out: torch.Tensor, e: Net, c: Net) -> torch.Tensor:
    """Compliance: G(x) against its re-rendering e(c(G(x)))"""
    return pixel_distance(g_out, e(c(g_out)))


def embedding_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return ((a - b) ** 2).sum(dim=1).mean()


def loss_const(x: torch.Tensor, g_out: torch.Tensor, f: Net) -> torch.Tensor:
    """f-constancy between the input and the generated image"""
    return embedding_distance(f(x), f(g_out))


def gan_terms(d_real: torch.Tensor, d_fake: torch.Tensor, variant: str = "nonsaturating") -> Tuple[torch.Tensor, torch.Tensor]:
    """
    From discriminator probabilities, (d_objective, g_objective).
    d minimizes -[mean log d(t) + mean log(1 - d(G))].
    """
    d_objective = -gan_value(d_real, d_fake)
    return d_objective, generator_objective(d_fake, variant)


def generator_objective(d_fake: torch.Tensor, variant: str = "nonsaturating") -> torch.Tensor:
    """Nonsaturating: -mean log d(G). Minimax: mean log(1 - d(G))."""
    if variant == "nonsaturating":
        return -torch.log(d_fake.clamp(min=LOG_CLAMP)).mean()
    if variant == "minimax":
        return torch.log((1.0 - d_fake).clamp(min=LOG_CLAMP)).mean()
    raise ValueError(f"Unknown GAN variant '{variant}'")


def gan_value(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """The quantity the discriminator maximizes"""
    return torch.log(d_real.clamp(min=LOG_CLAMP)).mean() + torch.log((1.0 - d_fake).clamp(min=LOG_CLAMP)).mean()


def loss_gan(d: Net, g_out: torch.Tensor, t: torch.Tensor, variant: str = "nonsaturating") -> Tuple[torch.Tensor, torch.Tensor]:
    return gan_terms(d(t), d(g_out), variant)


def loss_tid(t: torch.Tensor, g: Net, f: Net) -> torch.Tensor:
    """Engine renders must be reproduced by g(f(t))"""
    return pixel_distance(t, g(f(t)))


def loss_tv(z: torch.Tensor) -> torch.Tensor:
    """Isotropic total variation over positions with both a right and a lower neighbour."""
    if z.dim() == 3:
        z = z.unsqueeze(0)
    if z.shape[-1] < 2 or z.shape[-2] < 2:
        raise ValueError("Total variation needs images of at least 2x2")
    base = z[:, :, :-1, :-1]
    dx = z[:, :, :-1, 1:] - base
    dy = z[:, :, 1:, :-1] - base
    sq = dx ** 2 + dy ** 2
    # zero gradient at flat positions instead of NaN
    positive = sq > 0
    root = torch.where(positive, torch.sqrt(torch.where(positive, sq, torch.ones_like(sq))), torch.zeros_like(sq))
    return root.flatten(1).sum(dim=1).mean()
