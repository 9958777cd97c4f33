import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
import torch
import torch.nn as nn

from app.exceptions import ContractError
from app.services.feature_service import feature_service

logger = logging.getLogger(__name__)


@dataclass
class RetrievalSetup:
    """
    Probe identities with one mate photo each, a distractor gallery and the
    evaluation descriptor (f_eval, never the f used in training).
    """

    mates: np.ndarray
    distractors: np.ndarray
    feature: nn.Module
    distance: str = "cosine"

    @property
    def gallery_size(self) -> int:
        return len(self.distractors) + 1


def _l2_normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def pairwise_distance(queries: np.ndarray, gallery: np.ndarray, metric: str = "cosine") -> np.ndarray:
    """Q x G distances; cosine distance is 1 - cosine similarity"""
    queries = np.asarray(queries, dtype=np.float64).reshape(len(queries), -1)
    gallery = np.asarray(gallery, dtype=np.float64).reshape(len(gallery), -1)
    if metric == "cosine":
        return 1.0 - _l2_normalize(queries) @ _l2_normalize(gallery).T
    if metric == "euclidean":
        sq = (queries ** 2).sum(1)[:, None] + (gallery ** 2).sum(1)[None, :] - 2.0 * queries @ gallery.T
        return np.sqrt(np.maximum(sq, 0.0))
    raise ContractError(f"Unknown distance '{metric}'")


def mate_ranks(probes: np.ndarray, mates: np.ndarray, distractors: np.ndarray, metric: str = "cosine") -> np.ndarray:
    """
    1-based rank of each probe's mate in the gallery (distractors + mate),
    sorted by ascending distance. Distractors tied with the mate rank ahead of it.
    """
    if len(probes) != len(mates):
        raise ContractError(f"{len(probes)} probes for {len(mates)} mates")
    mate_dist = np.array([pairwise_distance(p[None], m[None], metric)[0, 0] for p, m in zip(probes, mates)])
    if len(distractors) == 0:
        return np.ones(len(probes), dtype=np.int64)
    distractor_dist = pairwise_distance(probes, distractors, metric)
    return 1 + (distractor_dist <= mate_dist[:, None]).sum(axis=1).astype(np.int64)


def lower_median(values) -> int:
    ordered = np.sort(np.asarray(values))
    if len(ordered) == 0:
        raise ContractError("Median of an empty rank list")
    return int(ordered[(len(ordered) - 1) // 2])


class RetrievalService:
    """Cross-domain identification: how well generated images retrieve the mate photo"""

    def embed(self, setup: RetrievalSetup, images) -> np.ndarray:
        return feature_service.embed(setup.feature, images).numpy()

    def retrieval_median_rank(self, setup: RetrievalSetup, probe_images) -> Tuple[int, np.ndarray]:
        """(lower median rank, per-probe ranks) of the given per-probe images"""
        if len(setup.mates) == 0:
            raise ContractError("Retrieval gallery is empty")
        if len(probe_images) != len(setup.mates):
            raise ContractError(f"{len(probe_images)} probe images for {len(setup.mates)} probes")
        ranks = mate_ranks(
            self.embed(setup, probe_images),
            self.embed(setup, setup.mates),
            self.embed(setup, setup.distractors) if len(setup.distractors) else np.zeros((0, 1)),
            setup.distance,
        )
        median = lower_median(ranks)
        logger.info(f"Median rank {median} over {len(ranks)} probes, gallery of {setup.gallery_size}")
        return median, ranks

    def multi_image_select(
        self, queries, f: nn.Module, pipeline: Callable[[torch.Tensor], torch.Tensor]
    ) -> int:
        """
        Index of the photo x in the query set minimizing ||f(x) - f(e(c(G(x))))||.
        Ties go to the lowest index.
        """
        x = queries if isinstance(queries, torch.Tensor) else torch.from_numpy(np.ascontiguousarray(queries, dtype=np.float32))
        if len(x) == 0:
            raise ContractError("Multi-image selection needs at least one photo")
        with torch.no_grad():
            tied = pipeline(x)
        direct = feature_service.embed(f, x).double()
        rendered = feature_service.embed(f, tied).double()
        scores = torch.linalg.vector_norm(direct - rendered, dim=1).numpy()
        return int(np.argmin(scores))


# Singleton instance
retrieval_service = RetrievalService()
