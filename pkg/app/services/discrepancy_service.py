import logging
from typing import Callable, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.exceptions import ContractError
from app.schemas import EvalConfig
from app.services.training_utils import check_finite, progress, step_generator, to_tensor

logger = logging.getLogger(__name__)

MAX_PAIRS = 10_000

Distribution = Sequence[Tuple[object, float]]


def absolute_loss(a, b) -> float:
    return float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum())


def _risk(c1: Callable, c2: Callable, loss: Callable, dist: Distribution) -> float:
    return sum(prob * loss(c1(point), c2(point)) for point, prob in dist)


def _check_distribution(dist: Distribution, name: str):
    total = sum(prob for _, prob in dist)
    if not dist or any(prob < 0 for _, prob in dist) or abs(total - 1.0) > 1e-9:
        raise ContractError(f"Distribution '{name}' must be a non-empty list of (point, probability) summing to 1")


class Critic(nn.Module):
    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.main = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, 1),
        )

    def forward(self, x):
        return self.main(x.flatten(1)).flatten()


class DiscrepancyService:
    """Exact discrepancy on enumerable micro cases; a trained-critic proxy otherwise"""

    def brute_force_discrepancy(
        self, functions: Sequence[Callable], loss: Callable, dist_a: Distribution, dist_b: Distribution
    ) -> float:
        """max over (c1, c2) in the class of |R_a[c1, c2] - R_b[c1, c2]|"""
        if len(functions) ** 2 > MAX_PAIRS:
            raise ContractError(f"{len(functions) ** 2} function pairs exceed the enumeration limit of {MAX_PAIRS}")
        _check_distribution(dist_a, "a")
        _check_distribution(dist_b, "b")
        best = 0.0
        for c1 in functions:
            for c2 in functions:
                best = max(best, abs(_risk(c1, c2, loss, dist_a) - _risk(c1, c2, loss, dist_b)))
        return best

    def estimate_discrepancy(
        self, samples_a, samples_b, config: EvalConfig, iters: int = 300, seed: int = 0, batch: int = 64
    ) -> float:
        """
        Trains a binary critic h to tell the sample sets apart and returns
        |P_a(h = 1) - P_b(h = 1)|, a lower bound on the 0-1 discrepancy.
        """
        a, b = to_tensor(np.asarray(samples_a)), to_tensor(np.asarray(samples_b))
        if len(a) == 0 or len(b) == 0:
            raise ContractError("Discrepancy proxy needs samples from both distributions")
        a, b = a.reshape(len(a), -1), b.reshape(len(b), -1)
        if a.shape[1] != b.shape[1]:
            raise ContractError(f"Sample dimensions differ: {a.shape[1]} vs {b.shape[1]}")

        with torch.random.fork_rng():
            torch.manual_seed(seed)
            critic = Critic(a.shape[1], config.critic_hidden)
        optimizer = torch.optim.Adam(critic.parameters(), lr=config.critic_lr)

        for step in progress(range(iters), desc="train critic"):
            generator = step_generator(seed, "critic", step)
            xa = a[torch.randint(0, len(a), (batch,), generator=generator)]
            xb = b[torch.randint(0, len(b), (batch,), generator=generator)]
            logits = critic(torch.cat([xa, xb]))
            targets = torch.cat([torch.ones(batch), torch.zeros(batch)])
            loss = F.binary_cross_entropy_with_logits(logits, targets)
            check_finite({"critic": loss.item()}, step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        with torch.no_grad():
            hit_a = (critic(a) > 0).double().mean().item()
            hit_b = (critic(b) > 0).double().mean().item()
        proxy = abs(hit_a - hit_b)
        logger.info(f"Discrepancy proxy {proxy:.4f} over {len(a)} / {len(b)} samples")
        return proxy


# Singleton instance
discrepancy_service = DiscrepancyService()
