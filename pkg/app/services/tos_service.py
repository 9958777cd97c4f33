import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import torch
import torch.nn as nn

from app.engine.params import ParamSpec, ParamVector
from app.engine.sampling import derive_seed
from app.exceptions import ContractError
from app.nets.layers import inference_mode
from app.nets.models import Discriminator, GeneratorNet, ParamRegressor, build_initialized
from app.schemas import ArchDescriptor, LossReport, TrainConfig
from app.services.training_utils import check_finite, frozen, make_optimizer, progress, snapshot
from app.tos.discretize import discretize_params
from app.tos.losses import (
    embedding_distance,
    gan_terms,
    generator_objective,
    loss_le,
    loss_tid,
    loss_tv,
)

logger = logging.getLogger(__name__)


@dataclass
class TiedOutputs:
    g_out: torch.Tensor
    params: torch.Tensor
    tied: torch.Tensor


@dataclass
class TosResult:
    g: nn.Module
    c: Optional[nn.Module]
    d: nn.Module
    report: LossReport


class Pool:
    """Anything that yields a minibatch for a given step"""

    def batch(self, step: int, size: int) -> torch.Tensor:  # pragma: no cover - protocol
        raise NotImplementedError


class TosTrainer:
    """
    Adversarial + compliance training of g (and c) against d.

    Without e and c the compliance path is absent (the domain transfer
    baseline). With train_c False, c is held frozen (the fixed post-hoc
    regressor ablation).
    """

    def __init__(
        self,
        config: TrainConfig,
        g: nn.Module,
        d: nn.Module,
        f: nn.Module,
        e: Optional[nn.Module] = None,
        c: Optional[nn.Module] = None,
        train_c: bool = True,
        name: str = "tos",
        device: str = "cpu",
    ):
        if (e is None) != (c is None):
            raise ContractError("The compliance path needs both e and c")
        self.config, self.name, self.device = config, name, device
        self.g, self.d, self.f, self.e, self.c = g.to(device), d.to(device), f.to(device), e, c
        self.train_c = train_c and c is not None
        if e is not None:
            self.e, self.c = e.to(device), c.to(device)

        self.opt_g = make_optimizer(self.g, config)
        self.opt_d = make_optimizer(self.d, config)
        self.opt_c = make_optimizer(self.c, config) if self.train_c else None
        self._step, self._last_good, self._last_checkpoint = 0, None, None

    @property
    def use_compliance(self) -> bool:
        return self.e is not None

    def optimizers(self) -> Dict[str, torch.optim.Optimizer]:
        opts = {"g": self.opt_g, "d": self.opt_d}
        if self.opt_c is not None:
            opts["c"] = self.opt_c
        return opts

    def frozen_nets(self) -> Dict[str, nn.Module]:
        nets = {"e": self.e, "f": self.f}
        if not self.train_c:
            nets["c"] = self.c
        return {k: v for k, v in nets.items() if v is not None}

    def generate(self, s: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        with torch.no_grad():
            fs = self.f(s)
        return fs, self.g(fs)

    def discriminator_step(self, g_out: torch.Tensor, t: torch.Tensor) -> float:
        d_objective, _ = gan_terms(self.d(t), self.d(g_out.detach()), self.config.gan_variant)
        check_finite({"d_loss": d_objective.item()}, self._step)
        self.opt_d.zero_grad()
        d_objective.backward()
        self.opt_d.step()
        return d_objective.item()

    def generator_terms(self, fs: torch.Tensor, g_out: torch.Tensor, t: torch.Tensor) -> Dict[str, torch.Tensor]:
        """Every active loss term of the g/c objective, unweighted"""
        cfg = self.config
        terms: Dict[str, torch.Tensor] = {}
        if self.use_compliance:
            terms["L_c"] = loss_le(g_out, self.e, self.c)
        terms["L_GAN"] = generator_objective(self.d(g_out), cfg.gan_variant)
        if cfg.beta > 0:
            terms["L_CONST"] = embedding_distance(fs, self.f(g_out))
        if cfg.gamma > 0:
            terms["L_TID"] = loss_tid(t, self.g, self.f)
        if cfg.delta > 0:
            terms["L_TV"] = loss_tv(g_out)
        return terms

    def weights(self) -> Dict[str, float]:
        cfg = self.config
        return {"L_c": 1.0, "L_GAN": cfg.alpha, "L_CONST": cfg.beta, "L_TID": cfg.gamma, "L_TV": cfg.delta}

    def composite(self, terms: Dict[str, torch.Tensor]) -> torch.Tensor:
        weights = self.weights()
        total = None
        for term, value in terms.items():
            weighted = weights[term] * value
            total = weighted if total is None else total + weighted
        return total

    def objective(self, s: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """Composite g/c objective at the current weights (no update)"""
        fs, g_out = self.generate(s)
        return self.composite(self.generator_terms(fs, g_out, t))

    def _apply(self, loss: torch.Tensor, update_c: bool):
        self.opt_g.zero_grad()
        if self.opt_c is not None:
            self.opt_c.zero_grad()
        loss.backward()
        self.opt_g.step()
        if update_c and self.opt_c is not None:
            self.opt_c.step()

    def _combined_step(self, s, t) -> Dict[str, float]:
        fs, g_out = self.generate(s)
        d_loss = self.discriminator_step(g_out, t)
        terms = self.generator_terms(fs, g_out, t)
        total = self.composite(terms)
        values = {k: v.item() for k, v in terms.items()}
        values["composite"] = total.item()
        check_finite(values, self._step, self._last_good, self._last_checkpoint)
        self._apply(total, update_c=True)
        values["d_loss"] = d_loss
        return values

    def _sequential_step(self, s, t) -> Dict[str, float]:
        """One update per term, in the order d, GAN, TID, CONST, TV, compliance."""
        cfg = self.config
        fs, g_out = self.generate(s)
        values = {"d_loss": self.discriminator_step(g_out, t)}

        def update(term: str, weight: float, build: Callable[[torch.Tensor], torch.Tensor], update_c: bool = False):
            _, out = self.generate(s)
            loss = build(out)
            values[term] = loss.item()
            check_finite({term: values[term]}, self._step, self._last_good, self._last_checkpoint)
            self._apply(weight * loss, update_c)

        update("L_GAN", cfg.alpha, lambda out: generator_objective(self.d(out), cfg.gan_variant))
        if cfg.gamma > 0:
            update("L_TID", cfg.gamma, lambda out: loss_tid(t, self.g, self.f))
        if cfg.beta > 0:
            update("L_CONST", cfg.beta, lambda out: embedding_distance(fs, self.f(out)))
        if cfg.delta > 0:
            update("L_TV", cfg.delta, loss_tv)
        if self.use_compliance:
            update("L_c", 1.0, lambda out: loss_le(out, self.e, self.c), update_c=True)

        weights = self.weights()
        values["composite"] = sum(weights[k] * v for k, v in values.items() if k in weights)
        return values

    def step(self, step: int, s: torch.Tensor, t: torch.Tensor) -> Dict[str, float]:
        self._step = step
        if self.config.update_mode == "sequential":
            return self._sequential_step(s, t)
        return self._combined_step(s, t)

    def run(
        self,
        s_pool: Pool,
        t_pool: Pool,
        start_step: int = 0,
        on_checkpoint: Optional[Callable[[int, "TosTrainer"], Optional[str]]] = None,
    ) -> LossReport:
        cfg = self.config
        report = LossReport(name=self.name)
        self.g.train()
        self.d.train()
        if self.train_c:
            self.c.train()
        self._step = start_step
        self._last_good = snapshot(g=self.g, d=self.d, **({"c": self.c} if self.c is not None else {}))
        self._last_checkpoint = None

        with frozen(**self.frozen_nets()):
            for step in progress(range(start_step, cfg.iters), desc=f"train {self.name}"):
                values = self.step(step, s_pool.batch(step, cfg.batch), t_pool.batch(step, cfg.batch))
                report.append(step, values)
                if cfg.log_every and step % cfg.log_every == 0:
                    summary = " ".join(f"{k}={v:.4f}" for k, v in sorted(values.items()))
                    logger.info(f"{self.name} step {step}: {summary}")
                if on_checkpoint and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                    self._last_checkpoint = on_checkpoint(step + 1, self)
                    self._last_good = snapshot(g=self.g, d=self.d, **({"c": self.c} if self.c is not None else {}))
        return report


class TosService:
    """Builds the TOS networks, runs training and the tied forward pass"""

    def build_tos_nets(
        self, spec: ParamSpec, config: TrainConfig, in_dim: int, channels: int
    ) -> Tuple[GeneratorNet, ParamRegressor, Discriminator]:
        base = dict(channels=channels, resolution=config.resolution, width_multiplier=config.width_multiplier)
        g = build_initialized(
            ArchDescriptor(kind="generator", in_dim=in_dim, options={"pointwise": config.g_pointwise}, **base),
            derive_seed(config.seed, "init-g"),
        )
        c = build_initialized(
            ArchDescriptor(kind="regressor", out_dim=spec.total_dim, **base), derive_seed(config.seed, "init-c")
        )
        d = build_initialized(ArchDescriptor(kind="discriminator", out_dim=1, **base), derive_seed(config.seed, "init-d"))
        return g, c, d

    def forward_maps(self, x: torch.Tensor, f: nn.Module, g: nn.Module, c: nn.Module, e: nn.Module) -> TiedOutputs:
        """G(x) = g(f(x)), its configuration c(G(x)) and the tied render e(c(G(x)))"""
        with inference_mode(f, g, c, e):
            try:
                g_out = g(f(x))
                params = c(g_out)
                tied = e(params)
            except RuntimeError as exc:
                raise ContractError(f"Networks do not chain: {exc}")
        if tied.shape != g_out.shape:
            raise ContractError(f"Tied render shape {tuple(tied.shape)} differs from G(x) {tuple(g_out.shape)}")
        return TiedOutputs(g_out=g_out, params=params, tied=tied)

    def discretize_params(self, p: ParamVector, spec: ParamSpec) -> ParamVector:
        return discretize_params(p, spec)

    def train_tos(
        self,
        config: TrainConfig,
        e: nn.Module,
        f: nn.Module,
        s_pool: Pool,
        t_pool: Pool,
        nets: Tuple[nn.Module, nn.Module, nn.Module],
        start_step: int = 0,
        trainer_hook: Optional[Callable[[TosTrainer], None]] = None,
        on_checkpoint=None,
        device: str = "cpu",
    ) -> TosResult:
        g, c, d = nets
        trainer = TosTrainer(config, g, d, f, e=e, c=c, name="tos", device=device)
        if trainer_hook:
            trainer_hook(trainer)
        report = trainer.run(s_pool, t_pool, start_step, on_checkpoint)
        return TosResult(g=g, c=c, d=d, report=report)


# Singleton instance
tos_service = TosService()
