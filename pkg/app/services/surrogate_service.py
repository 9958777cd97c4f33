import logging
from typing import Callable, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from app.engine.params import ParamSpec
from app.engine.sampling import DomainSampler, SamplerKind
from app.nets.layers import inference_mode
from app.nets.models import SurrogateRenderer, build_initialized
from app.schemas import ArchDescriptor, FidelityReport, LossReport, TrainConfig
from app.services.data_service import data_service
from app.services.training_utils import (
    PairPool,
    check_finite,
    make_optimizer,
    progress,
    snapshot,
    to_tensor,
)
from app.tos.losses import pixel_distance

logger = logging.getLogger(__name__)

HOLDOUT_RATIO_LIMIT = 1.05


class SurrogateService:
    """Builds, trains and audits the differentiable engine surrogate e"""

    def build_e(self, spec: ParamSpec, config: TrainConfig, channels: Optional[int] = None) -> SurrogateRenderer:
        channels = channels or (1 if spec.name == "polygon" else 3)
        desc = ArchDescriptor(
            kind="surrogate",
            in_dim=spec.total_dim,
            channels=channels,
            resolution=config.resolution,
            width_multiplier=config.width_multiplier,
        )
        return build_initialized(desc, config.seed)

    def train_e(
        self,
        e: SurrogateRenderer,
        pairs: Tuple[np.ndarray, np.ndarray],
        config: TrainConfig,
        start_step: int = 0,
        optimizer: Optional[torch.optim.Optimizer] = None,
        on_checkpoint: Optional[Callable[[int, nn.Module, torch.optim.Optimizer], None]] = None,
        device: str = "cpu",
    ) -> Tuple[SurrogateRenderer, LossReport]:
        """
        Supervised pixel-MSE training on (parameter vector, true render) pairs.
        Steps run from start_step to config.iters; each minibatch depends only
        on (seed, step).
        """
        params, images = pairs
        pool = PairPool("e-pairs", to_tensor(params), to_tensor(images), config.seed, device)
        e.to(device).train()
        optimizer = optimizer or make_optimizer(e, config)
        report = LossReport(name="e")
        last_good = snapshot(e=e)

        for step in progress(range(start_step, config.iters), desc="train e"):
            inputs, targets = pool.pair_batch(step, config.batch)
            optimizer.zero_grad()
            loss = pixel_distance(e(inputs), targets)
            check_finite({"mse": loss.item()}, step, last_good)
            loss.backward()
            optimizer.step()

            report.append(step, {"mse": loss.item()})
            if config.log_every and step % config.log_every == 0:
                logger.info(f"e step {step}: mse={loss.item():.5f}")
            if on_checkpoint and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                on_checkpoint(step + 1, e, optimizer)
                last_good = snapshot(e=e)
        return e, report

    def per_image_mse(self, e: nn.Module, params: np.ndarray, truth: np.ndarray, device: str = "cpu") -> np.ndarray:
        """Per-image MSE of e(params) against truth, in the [-1,1] convention"""
        per_image = []
        with inference_mode(e):
            for lo in range(0, len(params), 256):
                pred = e(to_tensor(params[lo:lo + 256], device)).cpu().numpy()
                diff = pred.astype(np.float64) - truth[lo:lo + 256]
                per_image.append(np.mean(diff ** 2, axis=(1, 2, 3)))
        return np.concatenate(per_image) if per_image else np.zeros(0)

    def eval_e_fidelity(
        self,
        e: nn.Module,
        spec: ParamSpec,
        n: int,
        resolution: int,
        seed: int = 0,
        device: str = "cpu",
    ) -> FidelityReport:
        """
        e against the true engine on n fresh parameter samples, in both pixel
        conventions. mse_pm1 is always 4 x mse_01.
        """
        sampler = DomainSampler(SamplerKind.PARAMS, seed, "fidelity")
        params, truth = data_service.engine_pairs(spec, sampler, n, resolution)
        per_image = self.per_image_mse(e, params, truth, device)
        mse_pm1 = float(per_image.mean()) if n else 0.0
        worst = float(per_image.max()) if n else 0.0
        report = FidelityReport(n=n, mse_01=mse_pm1 / 4.0, mse_pm1=mse_pm1, worst_case=worst / 4.0)
        logger.info(f"Surrogate fidelity over {n} samples: mse_01={report.mse_01:.5f} worst={report.worst_case:.5f}")
        return report

    def split_fidelity(
        self,
        report: FidelityReport,
        e: nn.Module,
        train: Tuple[np.ndarray, np.ndarray],
        holdout: Tuple[np.ndarray, np.ndarray],
        device: str = "cpu",
    ) -> FidelityReport:
        """Adds the training and held-out pair MSEs to a fidelity report"""
        means = []
        for params, images in (train, holdout):
            per_image = self.per_image_mse(e, params, images, device)
            means.append(float(per_image.mean()) / 4.0 if len(per_image) else 0.0)
        report = report.model_copy(update={"train_mse_01": means[0], "holdout_mse_01": means[1]})
        ratio = report.holdout_ratio
        if ratio > HOLDOUT_RATIO_LIMIT:
            logger.warning(f"Surrogate held-out MSE is {ratio:.3f}x the training MSE (limit {HOLDOUT_RATIO_LIMIT})")
        else:
            logger.info(f"Surrogate held-out/train MSE ratio: {ratio:.3f}")
        return report


class EngineLookup(nn.Module):
    """The true engine wrapped as a (non-differentiable) renderer module."""

    def __init__(self, spec: ParamSpec, resolution: int):
        super().__init__()
        self.spec, self.resolution = spec, resolution

    def forward(self, params: torch.Tensor) -> torch.Tensor:
        images = data_service.render_batch(self.spec, params.detach().cpu().numpy(), self.resolution)
        return torch.from_numpy(images).to(params.device)


# Singleton instance
surrogate_service = SurrogateService()
