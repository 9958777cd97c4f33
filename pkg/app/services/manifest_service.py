import logging
import subprocess
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable

from app.exceptions import IntegrityError
from app.schemas import ExperimentConfig, RunManifest, StageRecord
from app.services.persistence_service import persistence_service

logger = logging.getLogger(__name__)

MANIFEST_FILE = "run_manifest.json"


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


class ManifestService:
    """The run manifest: config snapshot, seeds, revision and every stage's artifacts"""

    def revision(self) -> str:
        try:
            result = subprocess.run(
                ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5, check=False
            )
        except (OSError, subprocess.SubprocessError):
            return "unknown"
        return result.stdout.strip() if result.returncode == 0 and result.stdout.strip() else "unknown"

    def path(self, out_dir: Path) -> Path:
        return Path(out_dir) / MANIFEST_FILE

    def load_or_create(self, out_dir: Path, config: ExperimentConfig) -> RunManifest:
        path = self.path(out_dir)
        if path.is_file():
            try:
                manifest = RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
            except ValueError as exc:
                raise IntegrityError(f"Unreadable run manifest ({exc})", str(path))
            if manifest.config_hash != config.config_hash():
                logger.warning("Run directory was created with a different config; recording stages anyway")
            return manifest
        return RunManifest(
            config=config.model_dump(mode="json"),
            config_hash=config.config_hash(),
            seeds={"seed": config.train.seed},
            revision=self.revision(),
        )

    def hashes(self, paths: Iterable[Path], root: Path) -> Dict[str, str]:
        out = {}
        for path in paths:
            path = Path(path)
            if path.exists():
                out[path.relative_to(root).as_posix()] = persistence_service.artifact_hash(path)
        return out

    def record_stage(
        self,
        out_dir: Path,
        config: ExperimentConfig,
        name: str,
        inputs: Iterable[Path],
        outputs: Iterable[Path],
        started: datetime,
    ) -> RunManifest:
        out_dir = Path(out_dir)
        manifest = self.load_or_create(out_dir, config)
        record = StageRecord(
            name=name,
            inputs=self.hashes(inputs, out_dir),
            outputs=self.hashes(outputs, out_dir),
            started=started,
            finished=utcnow(),
        )
        # a rerun of a stage replaces its previous record
        manifest.stages = [s for s in manifest.stages if s.name != name] + [record]
        out_dir.mkdir(parents=True, exist_ok=True)
        self.path(out_dir).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"Recorded stage '{name}' with {len(record.outputs)} outputs")
        return manifest


# Singleton instance
manifest_service = ManifestService()
