import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.engine.params import ParamSpec
from app.engine.sampling import derive_seed
from app.nets.layers import inference_mode
from app.nets.models import DannNets, Discriminator, GeneratorNet, ParamRegressor, build_initialized
from app.schemas import ArchDescriptor, LossReport, TrainConfig
from app.services.training_utils import (
    NoisePool,
    PairPool,
    TensorPool,
    check_finite,
    make_optimizer,
    progress,
    snapshot,
    to_tensor,
)
from app.services.tos_service import Pool, TosTrainer
from app.tos.losses import gan_terms, generator_objective, pixel_distance

logger = logging.getLogger(__name__)


@dataclass
class GeneratorResult:
    g: nn.Module
    d: nn.Module
    report: LossReport


class DcganTrainer:
    """Unconditional generator on uniform noise. Knows nothing about e, c or f."""

    def __init__(self, generator: GeneratorNet, discriminator: Discriminator, config: TrainConfig, device: str = "cpu"):
        self.g, self.d = generator.to(device), discriminator.to(device)
        self.config, self.device = config, device
        self.opt_g = make_optimizer(self.g, config)
        self.opt_d = make_optimizer(self.d, config)

    def optimizers(self):
        return {"g": self.opt_g, "d": self.opt_d}

    def run(self, t_pool: Pool, start_step: int = 0, on_checkpoint=None) -> LossReport:
        cfg = self.config
        noise = NoisePool("dcgan-noise", self.g.in_dim, cfg.seed, self.device)
        report = LossReport(name="dcgan")
        self.g.train()
        self.d.train()
        last_good = snapshot(g=self.g, d=self.d)
        last_checkpoint = None

        for step in progress(range(start_step, cfg.iters), desc="train dcgan"):
            fake = self.g(noise.batch(step, cfg.batch))
            real = t_pool.batch(step, cfg.batch)

            d_objective, _ = gan_terms(self.d(real), self.d(fake.detach()), cfg.gan_variant)
            check_finite({"d_loss": d_objective.item()}, step, last_good, last_checkpoint)
            self.opt_d.zero_grad()
            d_objective.backward()
            self.opt_d.step()

            g_objective = generator_objective(self.d(fake), cfg.gan_variant)
            check_finite({"L_GAN": g_objective.item()}, step, last_good, last_checkpoint)
            self.opt_g.zero_grad()
            g_objective.backward()
            self.opt_g.step()

            report.append(step, {"d_loss": d_objective.item(), "L_GAN": g_objective.item()})
            if cfg.log_every and step % cfg.log_every == 0:
                logger.info(f"dcgan step {step}: d_loss={d_objective.item():.4f} L_GAN={g_objective.item():.4f}")
            if on_checkpoint and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                last_checkpoint = on_checkpoint(step + 1, self)
                last_good = snapshot(g=self.g, d=self.d)
        return report


class BaselineService:
    """The comparison systems, sharing the TOS losses, seeds and logging"""

    # DCGAN

    def build_dcgan_nets(self, config: TrainConfig, channels: int = 1) -> Tuple[GeneratorNet, Discriminator]:
        base = dict(channels=channels, resolution=config.resolution, width_multiplier=config.width_multiplier)
        g = build_initialized(
            ArchDescriptor(kind="generator", in_dim=config.noise_dim, options={"pointwise": False}, **base),
            derive_seed(config.seed, "init-dcgan-g"),
        )
        d = build_initialized(ArchDescriptor(kind="discriminator", out_dim=1, **base), derive_seed(config.seed, "init-dcgan-d"))
        return g, d

    def train_dcgan(
        self,
        t_pool: Pool,
        config: TrainConfig,
        nets: Tuple[GeneratorNet, Discriminator],
        start_step: int = 0,
        on_checkpoint=None,
        trainer_hook: Optional[Callable[[DcganTrainer], None]] = None,
        device: str = "cpu",
    ) -> GeneratorResult:
        g, d = nets
        trainer = DcganTrainer(g, d, config, device)
        if trainer_hook:
            trainer_hook(trainer)
        report = trainer.run(t_pool, start_step, on_checkpoint)
        return GeneratorResult(g=g, d=d, report=report)

    def sample_generator(self, g: GeneratorNet, n: int, seed: int, device: str = "cpu") -> torch.Tensor:
        """n samples from a noise-driven generator, drawn from a stream of their own"""
        noise = NoisePool("samples", g.in_dim, seed, device).batch(0, n)
        with inference_mode(g):
            return g(noise).cpu()

    # DTN and TOS with a fixed post-hoc regressor

    def train_dtn(
        self,
        config: TrainConfig,
        f: nn.Module,
        s_pool: Pool,
        t_pool: Pool,
        nets: Tuple[GeneratorNet, Discriminator],
        start_step: int = 0,
        on_checkpoint=None,
        trainer_hook: Optional[Callable[[TosTrainer], None]] = None,
        device: str = "cpu",
    ) -> GeneratorResult:
        """TOS without the compliance path: alpha GAN + beta CONST + gamma TID + delta TV"""
        g, d = nets
        trainer = TosTrainer(config, g, d, f, name="dtn", device=device)
        if trainer_hook:
            trainer_hook(trainer)
        report = trainer.run(s_pool, t_pool, start_step, on_checkpoint)
        return GeneratorResult(g=g, d=d, report=report)

    def train_tos_fixed_cbar(
        self,
        config: TrainConfig,
        e: nn.Module,
        f: nn.Module,
        cbar: ParamRegressor,
        s_pool: Pool,
        t_pool: Pool,
        nets: Tuple[GeneratorNet, Discriminator],
        start_step: int = 0,
        on_checkpoint=None,
        trainer_hook: Optional[Callable[[TosTrainer], None]] = None,
        device: str = "cpu",
    ) -> GeneratorResult:
        g, d = nets
        trainer = TosTrainer(config, g, d, f, e=e, c=cbar, train_c=False, name="tos_fixed_cbar", device=device)
        if trainer_hook:
            trainer_hook(trainer)
        report = trainer.run(s_pool, t_pool, start_step, on_checkpoint)
        return GeneratorResult(g=g, d=d, report=report)

    # Post-hoc regressor

    def build_cbar(self, spec: ParamSpec, config: TrainConfig, channels: int = 3) -> ParamRegressor:
        desc = ArchDescriptor(
            kind="regressor", out_dim=spec.total_dim, channels=channels,
            resolution=config.resolution, width_multiplier=config.width_multiplier,
        )
        return build_initialized(desc, derive_seed(config.seed, "init-cbar"))

    def train_post_hoc_cbar(
        self,
        cbar: ParamRegressor,
        pairs: Tuple[np.ndarray, np.ndarray],
        config: TrainConfig,
        start_step: int = 0,
        device: str = "cpu",
    ) -> Tuple[ParamRegressor, LossReport]:
        """Supervised regression from true engine renders to their parameter vectors"""
        images, params = pairs
        pool = PairPool("cbar-pairs", to_tensor(images), to_tensor(params), config.seed, device)
        cbar.to(device).train()
        optimizer = make_optimizer(cbar, config)
        report = LossReport(name="cbar")
        last_good = snapshot(cbar=cbar)

        for step in progress(range(start_step, config.iters), desc="train cbar"):
            inputs, targets = pool.pair_batch(step, config.batch)
            optimizer.zero_grad()
            loss = pixel_distance(cbar(inputs), targets)
            check_finite({"mse": loss.item()}, step, last_good)
            loss.backward()
            optimizer.step()
            report.append(step, {"mse": loss.item()})
            if config.log_every and step % config.log_every == 0:
                logger.info(f"cbar step {step}: mse={loss.item():.5f}")
        cbar.eval()
        return cbar, report

    # Domain adversarial adaptation

    def build_dann(self, spec: ParamSpec, config: TrainConfig, channels: int = 3) -> DannNets:
        desc = ArchDescriptor(
            kind="dann", out_dim=spec.total_dim, channels=channels,
            resolution=config.resolution, width_multiplier=config.width_multiplier,
            options={"reversal_weight": config.reversal_weight},
        )
        return build_initialized(desc, derive_seed(config.seed, "init-dann"))

    def dann_losses(
        self, nets: DannNets, source: torch.Tensor, labels: torch.Tensor, target: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """(label loss on source, domain loss on source=1 / target=0), the latter through the reversal"""
        source_feats = nets.features(source)
        label_loss = pixel_distance(nets.l(source_feats), labels)
        feats = torch.cat([source_feats, nets.features(target)])
        domains = torch.cat([torch.ones(len(source)), torch.zeros(len(target))]).to(feats.device)
        probs = nets.domain(feats).clamp(1e-7, 1.0 - 1e-7)
        domain_loss = F.binary_cross_entropy(probs, domains)
        return label_loss, domain_loss

    def train_dann(
        self,
        nets: DannNets,
        source: Tuple[np.ndarray, np.ndarray],
        target: np.ndarray,
        config: TrainConfig,
        start_step: int = 0,
        device: str = "cpu",
    ) -> Tuple[DannNets, LossReport]:
        """
        l learns parameters from labelled engine renders; d_adv learns the
        domain while the reversed gradient pushes p towards domain-invariant
        features.
        """
        images, params = source
        source_pool = PairPool("dann-source", to_tensor(images), to_tensor(params), config.seed, device)
        target_pool = TensorPool("dann-target", to_tensor(target), config.seed, device)
        nets.to(device).train()
        optimizer = make_optimizer(nets, config)
        report = LossReport(name="dann")
        last_good = snapshot(dann=nets)

        for step in progress(range(start_step, config.iters), desc="train dann"):
            xs, ys = source_pool.pair_batch(step, config.batch)
            xt = target_pool.batch(step, config.batch)
            label_loss, domain_loss = self.dann_losses(nets, xs, ys, xt)
            total = label_loss + domain_loss
            values = {"label": label_loss.item(), "domain": domain_loss.item(), "total": total.item()}
            check_finite(values, step, last_good)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            report.append(step, values)
            if config.log_every and step % config.log_every == 0:
                logger.info(f"dann step {step}: label={values['label']:.4f} domain={values['domain']:.4f}")
        nets.eval()
        return nets, report

    def dann_predict(self, nets: DannNets, images, device: str = "cpu") -> torch.Tensor:
        x = images if isinstance(images, torch.Tensor) else to_tensor(images, device)
        with inference_mode(nets):
            return nets(x.to(device)).cpu()


# Singleton instance
baseline_service = BaselineService()
