import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Set, Tuple

import numpy as np

from app.engine.avatar import render_avatar
from app.engine.images import ImageTensor
from app.engine.params import ParamSpec, ParamVector, spec_for
from app.engine.photo import IdentityLatent, photo_seed, render_photo, sample_identity
from app.engine.polygon import render_polygon
from app.engine.sampling import DomainSampler, SamplerKind, sample_params
from app.exceptions import ContractError
from app.schemas import ExperimentConfig, ShardManifest
from app.services.persistence_service import persistence_service
from app.tos.discretize import discretize_batch

logger = logging.getLogger(__name__)


@dataclass
class PhotoBatch:
    images: np.ndarray
    labels: np.ndarray
    params: np.ndarray
    keys: List[str]


class DataService:
    """Engine renders, synthetic photo pools and their on-disk shards"""

    def render(self, spec: ParamSpec, p: ParamVector, resolution: int) -> ImageTensor:
        if spec.name == "polygon":
            return render_polygon(p, resolution, spec)
        return render_avatar(p, resolution, spec)

    def render_batch(self, spec: ParamSpec, values: np.ndarray, resolution: int) -> np.ndarray:
        """True engine renders of raw vectors, discretized first"""
        legal = discretize_batch(np.asarray(values).reshape(-1, spec.total_dim), spec)
        channels = 1 if spec.name == "polygon" else 3
        out = np.empty((len(legal), channels, resolution, resolution), dtype=np.float32)
        for i, row in enumerate(legal):
            out[i] = self.render(spec, ParamVector(row, discrete=True), resolution).data
        return out

    def engine_pairs(
        self, spec: ParamSpec, sampler: DomainSampler, n: int, resolution: int, start: int = 0
    ) -> Tuple[np.ndarray, np.ndarray]:
        params = sample_params(spec, sampler, n, start)
        values = np.stack([p.values for p in params]) if params else np.zeros((0, spec.total_dim), np.float32)
        channels = 1 if spec.name == "polygon" else 3
        images = np.empty((n, channels, resolution, resolution), dtype=np.float32)
        for i, p in enumerate(params):
            images[i] = self.render(spec, p, resolution).data
        return values, images

    def identities(self, spec: ParamSpec, identity_set: str, seed: int, n: int, start: int = 0) -> List[IdentityLatent]:
        sampler = DomainSampler(SamplerKind.PHOTOS, seed, identity_set)
        return [sample_identity(spec, sampler, start + j) for j in range(n)]

    def identity_photos(
        self,
        spec: ParamSpec,
        identity_set: str,
        seed: int,
        n_identities: int,
        shots: int,
        resolution: int,
        first_shot: int = 0,
    ) -> PhotoBatch:
        """shots photos per identity, identity-major order"""
        sampler = DomainSampler(SamplerKind.PHOTOS, seed, identity_set)
        images = np.empty((n_identities * shots, 3, resolution, resolution), dtype=np.float32)
        labels = np.empty(n_identities * shots, dtype=np.float32)
        params = np.empty((n_identities * shots, spec.total_dim), dtype=np.float32)
        keys = []
        row = 0
        for j in range(n_identities):
            identity = sample_identity(spec, sampler, j)
            keys.append(identity.key)
            for shot in range(first_shot, first_shot + shots):
                images[row] = render_photo(identity, photo_seed(sampler, j, shot), resolution, spec).data
                labels[row] = j
                params[row] = identity.base_params.values
                row += 1
        return PhotoBatch(images=images, labels=labels, params=params, keys=keys)

    def check_disjoint(self, key_sets: Dict[str, Set[str]]):
        names = sorted(key_sets)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                shared = key_sets[a] & key_sets[b]
                if shared:
                    raise ContractError(f"Identity sets '{a}' and '{b}' share {len(shared)} identities")

    def generate(self, config: ExperimentConfig, data_dir: Path) -> Dict[str, ShardManifest]:
        """Write every dataset shard the pipeline consumes"""
        spec = spec_for(config.data.domain, config.data.variant)
        seed, res = config.train.seed, config.train.resolution
        data = config.data
        manifests: Dict[str, ShardManifest] = {}

        def save(name: str, arrays: Dict[str, np.ndarray], count: int, **meta):
            manifests[name] = persistence_service.save_shard(
                Path(data_dir) / name, name, arrays, spec.spec_hash(), count, seed, res,
                meta={"domain": data.domain, "spec": spec.name, **meta},
            )

        for name, n in (("pairs_train", data.n_pairs), ("pairs_holdout", data.n_holdout), ("t", data.n_t)):
            sampler = DomainSampler(SamplerKind.PARAMS, seed, name)
            params, images = self.engine_pairs(spec, sampler, n, res)
            save(name, {"params": params, "images": images}, n)
            logger.info(f"Generated {n} engine renders for '{name}'")

        if data.domain == "polygon":
            return manifests

        keys: Dict[str, Set[str]] = {}

        s = self.identity_photos(spec, "s", seed, data.n_s, 1, res)
        keys["s"] = set(s.keys)
        save("s", {"images": s.images, "params": s.params}, len(s.images), identity_set="s")

        for role, n_ids in (("f", data.f_identities), ("f_eval", data.f_eval_identities)):
            batch = self.identity_photos(spec, role, seed, n_ids, data.f_photos_per_identity, res)
            keys[role] = set(batch.keys)
            save(f"{role}_train", {"images": batch.images, "labels": batch.labels}, len(batch.images),
                 identity_set=role, identities=n_ids)

        # query photos Xq followed by one mate photo per probe identity
        probes = self.identity_photos(spec, "probe", seed, data.probe_count, data.probe_shots + 1, res)
        keys["probe"] = set(probes.keys)
        per_id = probes.images.reshape(data.probe_count, data.probe_shots + 1, 3, res, res)
        save(
            "probes",
            {
                "queries": per_id[:, :-1],
                "mates": per_id[:, -1],
                "params": probes.params[:: data.probe_shots + 1],
            },
            data.probe_count,
            identity_set="probe",
        )

        distractors = self.identity_photos(spec, "distractor", seed, data.distractors, 1, res)
        keys["distractor"] = set(distractors.keys)
        save("distractors", {"images": distractors.images}, data.distractors, identity_set="distractor")

        self.check_disjoint(keys)
        logger.info(f"Generated photo pools for identity sets {sorted(keys)}")
        return manifests


# Singleton instance
data_service = DataService()
