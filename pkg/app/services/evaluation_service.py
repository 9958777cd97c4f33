import logging
from typing import Dict

import numpy as np
import torch
import torch.nn as nn

from app.engine.oracle import polygon_nearest
from app.engine.params import ParamSpec, SlotKind
from app.exceptions import ContractError
from app.nets.layers import inference_mode
from app.schemas import BoundLedger, RecoveryReport
from app.services.data_service import data_service
from app.services.training_utils import to_tensor
from app.tos.discretize import discretize_batch
from app.tos.losses import embedding_distance, loss_le, loss_tid, pixel_distance

logger = logging.getLogger(__name__)

# continuous slots count as recovered within this distance on the [-1, 1] scale
CONTINUOUS_TOLERANCE = 0.1
EVAL_BATCH = 256


def _as_tensor(images, device: str) -> torch.Tensor:
    x = images if isinstance(images, torch.Tensor) else to_tensor(images)
    return x.to(device)


class EvaluationService:
    """Read-only metrics over frozen networks"""

    def batched(self, fn, images, device: str = "cpu", batch: int = EVAL_BATCH) -> torch.Tensor:
        x = _as_tensor(images, device)
        return torch.cat([fn(x[lo:lo + batch]).cpu() for lo in range(0, len(x), batch)]) if len(x) else torch.zeros(0)

    def compliance_error(self, images, e: nn.Module, c: nn.Module, device: str = "cpu") -> float:
        """Mean of ||x - e(c(x))||^2 over the batch, pixel-mean normalised"""
        x = _as_tensor(images, device)
        if len(x) == 0:
            raise ContractError("Compliance needs at least one image")
        total = 0.0
        with inference_mode(e, c):
            for lo in range(0, len(x), EVAL_BATCH):
                chunk = x[lo:lo + EVAL_BATCH]
                total += loss_le(chunk, e, c).item() * len(chunk)
        return total / len(x)

    def engine_manifold_distance(self, images) -> float:
        """Mean distance (pixel MSE, [0, 1] convention) to the nearest true polygon render"""
        array = images.detach().cpu().numpy() if isinstance(images, torch.Tensor) else np.asarray(images)
        if len(array) == 0:
            raise ContractError("Manifold distance needs at least one image")
        _, residuals = polygon_nearest(array)
        return float(residuals.mean())

    def generate(self, g: nn.Module, f: nn.Module, images, device: str = "cpu") -> torch.Tensor:
        """G(x) = g(f(x))"""
        with inference_mode(g, f):
            return self.batched(lambda x: g(f(x)), images, device)

    def predict_params(self, c: nn.Module, g: nn.Module, f: nn.Module, images, device: str = "cpu") -> np.ndarray:
        """Raw c(g(f(x))) outputs"""
        with inference_mode(c, g, f):
            return self.batched(lambda x: c(g(f(x))), images, device).numpy()

    def engine_probe_images(self, spec: ParamSpec, params: np.ndarray, resolution: int) -> np.ndarray:
        """True engine renders of the discretized configurations"""
        return data_service.render_batch(spec, params, resolution)

    def recovery_from_params(self, predicted: np.ndarray, truth: np.ndarray, spec: ParamSpec) -> RecoveryReport:
        """Per-slot agreement between discretized predictions and ground truth"""
        predicted = discretize_batch(np.asarray(predicted).reshape(-1, spec.total_dim), spec)
        truth = discretize_batch(np.asarray(truth).reshape(-1, spec.total_dim), spec)
        if len(predicted) != len(truth):
            raise ContractError(f"{len(predicted)} predictions for {len(truth)} ground-truth vectors")
        n = len(truth)
        if n == 0:
            raise ContractError("Recovery needs at least one probe")

        per_slot: Dict[str, float] = {}
        chance: Dict[str, float] = {}
        all_match = np.ones(n, dtype=bool)
        for slot in spec.slots:
            if slot.kind == SlotKind.CATEGORICAL:
                hit = predicted[:, slot.span].argmax(axis=1) == truth[:, slot.span].argmax(axis=1)
                chance[slot.name] = 1.0 / slot.choices
            elif slot.kind == SlotKind.INTEGER:
                hit = np.isclose(predicted[:, slot.offset], truth[:, slot.offset], atol=1e-4)
                chance[slot.name] = 1.0 / slot.choices
            else:
                hit = np.abs(predicted[:, slot.offset] - truth[:, slot.offset]) <= CONTINUOUS_TOLERANCE
                chance[slot.name] = CONTINUOUS_TOLERANCE
            per_slot[slot.name] = float(hit.mean())
            all_match &= hit
        return RecoveryReport(per_slot=per_slot, chance=chance, exact_match=float(all_match.mean()), n=n)

    def param_recovery_accuracy(
        self, c: nn.Module, g: nn.Module, f: nn.Module, images, truth: np.ndarray, spec: ParamSpec, device: str = "cpu"
    ) -> RecoveryReport:
        return self.recovery_from_params(self.predict_params(c, g, f, images, device), truth, spec)

    def bound_term_report(
        self,
        e: nn.Module,
        c: nn.Module,
        g: nn.Module,
        f: nn.Module,
        spec: ParamSpec,
        x: np.ndarray,
        truth: np.ndarray,
        t: np.ndarray,
        discrepancy_proxy: float,
        device: str = "cpu",
    ) -> BoundLedger:
        """
        Empirical risk of the rendered prediction against the rendered truth,
        next to the computable terms that bound it. The slack term cannot be
        estimated and is reported as such.
        """
        xs, ts = _as_tensor(x, device), _as_tensor(t, device)
        y = to_tensor(discretize_batch(truth, spec), device)
        with inference_mode(e, c, g, f):
            g_out = g(f(xs))
            predicted = to_tensor(discretize_batch(c(g_out).cpu().numpy(), spec), device)
            lhs = pixel_distance(e(predicted), e(y)).item()
            compliance = loss_le(g_out, e, c).item()
            tid = loss_tid(ts, g, f).item()
            constancy = embedding_distance(f(xs), f(g_out)).item()

        rhs = compliance + tid + constancy + discrepancy_proxy
        ledger = BoundLedger(
            lhs=lhs,
            compliance_risk=compliance,
            tid_risk=tid,
            constancy_risk=constancy,
            discrepancy_proxy=discrepancy_proxy,
            rhs_computable=rhs,
            lhs_within_rhs=lhs <= rhs,
        )
        logger.info(f"Bound ledger: lhs={lhs:.5f} rhs(computable)={rhs:.5f} within={ledger.lhs_within_rhs}")
        return ledger


# Singleton instance
evaluation_service = EvaluationService()
