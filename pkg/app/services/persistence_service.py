import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from app.exceptions import IntegrityError, MissingArtifactError
from app.nets.models import build_from_descriptor
from app.schemas import CheckpointManifest, ShardManifest, TensorEntry

logger = logging.getLogger(__name__)

MAGIC = b"TOSFRG01"
MANIFEST = "manifest.json"


@dataclass
class Shard:
    manifest: ShardManifest
    arrays: Dict[str, np.ndarray]


class PersistenceService:
    """Raw tensor files, checkpoint archives and dataset shards"""

    def write_tensor(self, path: Path, array: np.ndarray) -> TensorEntry:
        data = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
        header = MAGIC + struct.pack("<I", data.ndim) + struct.pack(f"<{data.ndim}Q", *data.shape)
        payload = header + data.tobytes()
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(payload)
        return TensorEntry(file=path.name, sha256=hashlib.sha256(payload).hexdigest(), shape=list(data.shape))

    def read_tensor(self, path: Path, entry: Optional[TensorEntry] = None) -> np.ndarray:
        if not path.is_file():
            raise IntegrityError("Tensor file is missing", str(path))
        raw = path.read_bytes()
        if entry is not None and hashlib.sha256(raw).hexdigest() != entry.sha256:
            raise IntegrityError("Tensor file hash does not match its manifest", str(path))
        if len(raw) < 12 or raw[:8] != MAGIC:
            raise IntegrityError("Corrupted tensor header", str(path))

        (rank,) = struct.unpack_from("<I", raw, 8)
        header_len = 12 + 8 * rank
        if len(raw) < header_len:
            raise IntegrityError("Truncated tensor header", str(path))
        shape = struct.unpack_from(f"<{rank}Q", raw, 12)
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if len(raw) - header_len != expected:
            raise IntegrityError(
                f"Tensor payload has {len(raw) - header_len} bytes, header promises {expected}", str(path)
            )
        if entry is not None and list(shape) != entry.shape:
            raise IntegrityError("Tensor shape does not match its manifest", str(path))
        return np.frombuffer(raw, dtype="<f4", offset=header_len).reshape(shape).astype(np.float32)

    def _tensor_set_hash(self, entries: Dict[str, TensorEntry]) -> str:
        digest = hashlib.sha256()
        for name in sorted(entries):
            digest.update(f"{name}:{entries[name].sha256}".encode("utf-8"))
        return digest.hexdigest()

    def _write_manifest(self, directory: Path, manifest):
        directory.mkdir(parents=True, exist_ok=True)
        (directory / MANIFEST).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")

    def _read_manifest(self, directory: Path, model):
        path = directory / MANIFEST
        if not path.is_file():
            raise MissingArtifactError(f"No manifest found in {directory}")
        try:
            return model.model_validate_json(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise IntegrityError(f"Unreadable manifest ({exc})", str(path))

    # Checkpoints

    def save_checkpoint(
        self,
        directory: Path,
        name: str,
        module: nn.Module,
        step: int = 0,
        seed: int = 0,
        config_hash: str = "",
        hyperparameters: Optional[Dict[str, Any]] = None,
        optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None,
    ) -> CheckpointManifest:
        """
        Write a checkpoint archive: one tensor file per parameter/buffer and
        per optimizer moment, plus a manifest with the architecture.
        """
        directory = Path(directory)
        self._clear(directory)
        tensors: Dict[str, TensorEntry] = {}
        for i, (key, tensor) in enumerate(module.state_dict().items()):
            tensors[key] = self.write_tensor(directory / f"w{i:04d}.bin", tensor.detach().cpu().numpy())

        optimizer_meta: Dict[str, Dict[str, Any]] = {}
        for opt_name, optimizer in (optimizers or {}).items():
            state = optimizer.state_dict()
            slots = {}
            for index, per_param in state["state"].items():
                for slot, value in per_param.items():
                    key = f"optim.{opt_name}.{index}.{slot}"
                    fname = f"o_{opt_name}_{index:04d}_{slot}.bin"
                    tensors[key] = self.write_tensor(directory / fname, torch.as_tensor(value).cpu().numpy())
                    slots.setdefault(str(index), []).append(slot)
            optimizer_meta[opt_name] = {"param_groups": state["param_groups"], "slots": slots}

        manifest = CheckpointManifest(
            name=name,
            descriptor=module.descriptor(),
            step=step,
            seed=seed,
            config_hash=config_hash,
            hyperparameters=hyperparameters or {},
            tensors=tensors,
            optimizers=optimizer_meta,
        )
        manifest.tensor_set_hash = self._tensor_set_hash(tensors)
        self._write_manifest(directory, manifest)
        logger.info(f"Saved checkpoint '{name}' at step {step} to {directory}")
        return manifest

    def load_checkpoint(
        self, directory: Path, optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None
    ) -> Tuple[nn.Module, CheckpointManifest]:
        """Rebuild the network from its descriptor and restore weights bit-exactly."""
        directory = Path(directory)
        manifest: CheckpointManifest = self._read_manifest(directory, CheckpointManifest)
        if self._tensor_set_hash(manifest.tensors) != manifest.tensor_set_hash:
            raise IntegrityError("Tensor set does not match the manifest hash", str(directory / MANIFEST))

        module = build_from_descriptor(manifest.descriptor)
        reference = module.state_dict()
        state = {}
        for key, ref in reference.items():
            if key not in manifest.tensors:
                raise IntegrityError(f"Checkpoint has no tensor for '{key}'", str(directory))
            entry = manifest.tensors[key]
            array = self.read_tensor(directory / entry.file, entry)
            state[key] = torch.from_numpy(array.copy()).to(ref.dtype).reshape(ref.shape)
        module.load_state_dict(state)

        for opt_name, optimizer in (optimizers or {}).items():
            self._restore_optimizer(directory, manifest, opt_name, optimizer)
        return module, manifest

    def restore_optimizers(self, directory: Path, optimizers: Dict[str, torch.optim.Optimizer]) -> CheckpointManifest:
        """Restore optimizer moments into optimizers built over already-loaded weights"""
        directory = Path(directory)
        manifest: CheckpointManifest = self._read_manifest(directory, CheckpointManifest)
        for opt_name, optimizer in optimizers.items():
            self._restore_optimizer(directory, manifest, opt_name, optimizer)
        return manifest

    def _restore_optimizer(self, directory: Path, manifest: CheckpointManifest, opt_name: str, optimizer):
        if opt_name not in manifest.optimizers:
            raise IntegrityError(f"Checkpoint has no optimizer state '{opt_name}'", str(directory))
        meta = manifest.optimizers[opt_name]
        state = {}
        for index, slots in meta["slots"].items():
            per_param = {}
            for slot in slots:
                entry = manifest.tensors[f"optim.{opt_name}.{index}.{slot}"]
                value = torch.from_numpy(self.read_tensor(directory / entry.file, entry).copy())
                per_param[slot] = value
            state[int(index)] = per_param
        optimizer.load_state_dict({"state": state, "param_groups": meta["param_groups"]})

    # Dataset shards

    def save_shard(
        self,
        directory: Path,
        name: str,
        arrays: Dict[str, np.ndarray],
        spec_hash: str,
        count: int,
        seed: int,
        resolution: int,
        meta: Optional[Dict[str, Any]] = None,
    ) -> ShardManifest:
        directory = Path(directory)
        self._clear(directory)
        entries: Dict[str, TensorEntry] = {}
        if count > 0:
            for key, array in arrays.items():
                if len(array) != count:
                    raise IntegrityError(f"Array '{key}' has {len(array)} rows, shard count is {count}", str(directory))
                entries[key] = self.write_tensor(directory / f"{key}.bin", array)
        manifest = ShardManifest(
            name=name, spec_hash=spec_hash, count=count, seed=seed,
            resolution=resolution, arrays=entries, meta=meta or {},
        )
        manifest.tensor_set_hash = self._tensor_set_hash(entries)
        self._write_manifest(directory, manifest)
        logger.info(f"Saved shard '{name}' ({count} rows) to {directory}")
        return manifest

    def load_shard(self, directory: Path) -> Shard:
        directory = Path(directory)
        manifest: ShardManifest = self._read_manifest(directory, ShardManifest)
        if self._tensor_set_hash(manifest.arrays) != manifest.tensor_set_hash:
            raise IntegrityError("Array set does not match the manifest hash", str(directory / MANIFEST))
        arrays = {}
        for key, entry in manifest.arrays.items():
            array = self.read_tensor(directory / entry.file, entry)
            if len(array) != manifest.count:
                raise IntegrityError(
                    f"Manifest count {manifest.count} differs from {len(array)} rows in '{key}'",
                    str(directory / entry.file),
                )
            arrays[key] = array
        return Shard(manifest=manifest, arrays=arrays)

    def _clear(self, directory: Path):
        """Drops tensor files and the manifest of an earlier save into the same directory"""
        if directory.is_dir():
            for stale in [*directory.glob("*.bin"), directory / MANIFEST]:
                stale.unlink(missing_ok=True)

    def artifact_hash(self, path: Path) -> str:
        """Content hash of a file or of every file below a directory"""
        path = Path(path)
        digest = hashlib.sha256()
        files = [path] if path.is_file() else sorted(p for p in path.rglob("*") if p.is_file())
        for file in files:
            digest.update(str(file.relative_to(path.parent if path.is_file() else path)).encode("utf-8"))
            digest.update(file.read_bytes())
        return digest.hexdigest()


# Singleton instance
persistence_service = PersistenceService()
