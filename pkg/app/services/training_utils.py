import logging
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional

import numpy as np
import torch
import torch.nn as nn
from tqdm import tqdm

from app.config.settings import settings
from app.engine.sampling import derive_seed
from app.exceptions import DivergenceError, FrozenNetError
from app.nets.layers import set_requires_grad, weights_hash
from app.schemas import TrainConfig

logger = logging.getLogger(__name__)


def configure_determinism(enabled: bool):
    if enabled:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    torch.use_deterministic_algorithms(enabled, warn_only=False)
    torch.backends.cudnn.deterministic = enabled
    torch.backends.cudnn.benchmark = not enabled


def step_generator(seed: int, stream: str, step: int, device: str = "cpu") -> torch.Generator:
    """torch generator keyed by (seed, stream, step) so any step can be replayed"""
    generator = torch.Generator(device=device)
    generator.manual_seed(derive_seed(seed, stream, step))
    return generator


def make_optimizer(module: nn.Module, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=config.lr, betas=(config.adam_beta1, config.adam_beta2))


def progress(iterable, **kwargs):
    return tqdm(iterable, disable=not settings.PROGRESS, **kwargs)


class TensorPool:
    """Fixed in-memory dataset; minibatch indices depend only on (seed, name, step)."""

    def __init__(self, name: str, data: torch.Tensor, seed: int, device: str = "cpu"):
        if len(data) == 0:
            raise ValueError(f"Pool '{name}' is empty")
        self.name, self.data, self.seed, self.device = name, data, seed, device

    def __len__(self):
        return len(self.data)

    def indices(self, step: int, size: int) -> torch.Tensor:
        return torch.randint(0, len(self.data), (size,), generator=step_generator(self.seed, self.name, step))

    def batch(self, step: int, size: int) -> torch.Tensor:
        return self.data[self.indices(step, size)].to(self.device)


class PairPool(TensorPool):
    """Aligned inputs and targets sharing one index stream"""

    def __init__(self, name: str, inputs: torch.Tensor, targets: torch.Tensor, seed: int, device: str = "cpu"):
        super().__init__(name, inputs, seed, device)
        self.targets = targets

    def pair_batch(self, step: int, size: int):
        idx = self.indices(step, size)
        return self.data[idx].to(self.device), self.targets[idx].to(self.device)


class NoisePool:
    """Fresh uniform [-1, 1] noise every step"""

    def __init__(self, name: str, dim: int, seed: int, device: str = "cpu"):
        self.name, self.dim, self.seed, self.device = name, dim, seed, device

    def batch(self, step: int, size: int) -> torch.Tensor:
        generator = step_generator(self.seed, self.name, step)
        return (torch.rand(size, self.dim, generator=generator) * 2.0 - 1.0).to(self.device)


@dataclass
class FrozenGuard:
    """Puts nets in eval mode without gradients and verifies their weights never change."""

    nets: Dict[str, nn.Module]
    hashes: Dict[str, str] = field(default_factory=dict)

    def __enter__(self):
        for name, net in self.nets.items():
            net.eval()
            set_requires_grad(net, False)
            self.hashes[name] = weights_hash(net)
        return self

    def verify(self):
        for name, net in self.nets.items():
            if weights_hash(net) != self.hashes[name]:
                raise FrozenNetError(f"Frozen network '{name}' was modified during training")

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.verify()
        return False


@contextmanager
def frozen(**nets: nn.Module) -> Iterator[FrozenGuard]:
    with FrozenGuard({k: v for k, v in nets.items() if v is not None}) as guard:
        yield guard


def snapshot(**modules: nn.Module) -> Dict[str, Dict[str, torch.Tensor]]:
    return {name: {k: v.detach().clone() for k, v in m.state_dict().items()} for name, m in modules.items()}


def check_finite(values: Dict[str, float], step: int, last_good: Optional[dict] = None, checkpoint_path: Optional[str] = None):
    for term, value in values.items():
        if not math.isfinite(value):
            logger.error(f"Loss '{term}' became {value} at step {step}")
            raise DivergenceError(
                f"Training diverged at step {step}: loss '{term}' is {value}",
                step=step,
                last_good_state=last_good,
                checkpoint_path=checkpoint_path,
            )


def to_tensor(array: np.ndarray, device: str = "cpu") -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)).to(device)
