import logging
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.exceptions import ContractError, DegenerateTaskError
from app.nets.layers import inference_mode
from app.nets.models import FeatureNet, IdentityFeature, build_initialized
from app.schemas import ArchDescriptor, FeatureReport, LossReport, TrainConfig
from app.services.training_utils import PairPool, check_finite, make_optimizer, progress, snapshot, to_tensor

logger = logging.getLogger(__name__)

MIN_IDENTITIES = 100


class FeatureService:
    """Trains and queries the frozen perceptual maps f and f_eval"""

    def build_feature_map(self, config: TrainConfig, n_identities: int, channels: int = 3) -> FeatureNet:
        desc = ArchDescriptor(
            kind="feature",
            out_dim=config.embed_dim,
            channels=channels,
            resolution=config.resolution,
            width_multiplier=config.width_multiplier,
            options={"n_classes": n_identities},
        )
        return build_initialized(desc, config.seed)

    def identity_feature(self, dim: int) -> IdentityFeature:
        return IdentityFeature(dim)

    def train_feature_map(
        self,
        photos: np.ndarray,
        labels: np.ndarray,
        config: TrainConfig,
        role: str = "f",
        fm: Optional[FeatureNet] = None,
        device: str = "cpu",
    ) -> Tuple[FeatureNet, LossReport]:
        """
        Softmax identity classification; the embedding is the layer before the classifier.

        Two identities is the hard floor. Below MIN_IDENTITIES the map still
        trains, with a warning, so that scaled-down runs and tests can use a
        handful of identities; the reference configs all meet the minimum.
        """
        labels = np.asarray(labels).astype(np.int64)
        identities = np.unique(labels)
        if len(identities) < 2:
            raise DegenerateTaskError(f"Feature map '{role}' needs at least 2 identities, got {len(identities)}")
        if len(identities) < MIN_IDENTITIES:
            logger.warning(f"Feature map '{role}' trained on only {len(identities)} identities")
        counts = np.bincount(labels)
        if counts[identities].min() < 2:
            logger.warning(f"Feature map '{role}' has identities with a single photo")

        fm = fm or self.build_feature_map(config, int(labels.max()) + 1, photos.shape[1])
        fm.to(device).train()
        pool = PairPool(f"{role}-photos", to_tensor(photos), torch.from_numpy(labels), config.seed, device)
        optimizer = make_optimizer(fm, config)
        report = LossReport(name=role)
        last_good = snapshot(**{role: fm})

        for step in progress(range(config.iters), desc=f"train {role}"):
            images, targets = pool.pair_batch(step, config.batch)
            optimizer.zero_grad()
            loss = F.cross_entropy(fm.classify(images), targets)
            check_finite({"xent": loss.item()}, step, last_good)
            loss.backward()
            optimizer.step()
            report.append(step, {"xent": loss.item()})
            if config.log_every and step % config.log_every == 0:
                logger.info(f"{role} step {step}: xent={loss.item():.4f}")
        fm.eval()
        return fm, report

    def embed(self, fm: nn.Module, images, device: str = "cpu", batch: int = 256) -> torch.Tensor:
        """Deterministic embeddings of a batch (or a single C x H x W image)"""
        x = images if isinstance(images, torch.Tensor) else to_tensor(images)
        single = x.dim() == 3
        if single:
            x = x.unsqueeze(0)
        if x.dim() != 4 and not isinstance(fm, IdentityFeature):
            raise ContractError(f"Cannot embed tensor of shape {tuple(x.shape)}")
        outputs = []
        with inference_mode(fm):
            for lo in range(0, len(x), batch):
                outputs.append(fm.embed(x[lo:lo + batch].to(device)).cpu())
        out = torch.cat(outputs) if outputs else torch.zeros(0)
        return out[0] if single else out

    def identity_margin(self, fm: nn.Module, photos: np.ndarray, labels: np.ndarray) -> float:
        """Mean same-identity cosine similarity minus mean cross-identity similarity"""
        emb = F.normalize(self.embed(fm, photos), dim=1)
        sim = emb @ emb.T
        labels_t = torch.from_numpy(np.asarray(labels).astype(np.int64))
        same = labels_t[:, None] == labels_t[None, :]
        off_diag = ~torch.eye(len(labels_t), dtype=torch.bool)
        same_pairs = same & off_diag
        if not same_pairs.any() or not (~same).any():
            raise DegenerateTaskError("Margin needs both same-identity and cross-identity pairs")
        return float(sim[same_pairs].mean() - sim[~same].mean())

    def classification_accuracy(self, fm: FeatureNet, photos: np.ndarray, labels: np.ndarray) -> float:
        with inference_mode(fm):
            logits = fm.classify(to_tensor(photos))
        return float((logits.argmax(dim=1).numpy() == np.asarray(labels).astype(np.int64)).mean())

    def feature_report(self, fm: FeatureNet, photos: np.ndarray, labels: np.ndarray, role: str, identity_set: str) -> FeatureReport:
        n_ids = len(np.unique(labels))
        return FeatureReport(
            role=role,
            identity_set=identity_set,
            identities=n_ids,
            margin=self.identity_margin(fm, photos, labels),
            accuracy=self.classification_accuracy(fm, photos, labels),
            chance=1.0 / fm.n_classes,
        )


# Singleton instance
feature_service = FeatureService()
