import pytest
import numpy as np
import torch

from app.exceptions import IntegrityError, MissingArtifactError
from app.nets.layers import weights_hash
from app.nets.models import IdentityFeature
from app.services.persistence_service import MAGIC, persistence_service
from app.services.surrogate_service import surrogate_service
from app.services.tos_service import tos_service
from app.services.training_utils import NoisePool, TensorPool, make_optimizer, to_tensor
from tests.conftest import random_images


def test_tensor_roundtrip_is_bitwise(tmp_path):
    """Test a written tensor reads back with identical bytes and shape"""
    array = np.random.default_rng(0).normal(size=(3, 2, 5)).astype(np.float32)
    entry = persistence_service.write_tensor(tmp_path / "a.bin", array)
    loaded = persistence_service.read_tensor(tmp_path / "a.bin", entry)
    assert loaded.tobytes() == array.tobytes()
    assert entry.shape == [3, 2, 5]
    assert (tmp_path / "a.bin").read_bytes()[:8] == MAGIC


def test_truncated_tensor_names_file(tmp_path):
    """Test a truncated payload raises an integrity error naming the file"""
    path = tmp_path / "t.bin"
    persistence_service.write_tensor(path, np.ones((4, 4), dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(IntegrityError) as exc_info:
        persistence_service.read_tensor(path)

    print(f"Error: {exc_info.value.detail}")

    assert str(path) in exc_info.value.detail
    assert exc_info.value.status_code == 4


def test_corrupt_header(tmp_path):
    """Test a wrong magic is rejected"""
    path = tmp_path / "bad.bin"
    persistence_service.write_tensor(path, np.zeros(3, dtype=np.float32))
    path.write_bytes(b"NOTMAGIC" + path.read_bytes()[8:])
    with pytest.raises(IntegrityError):
        persistence_service.read_tensor(path)


def test_hash_mismatch(tmp_path):
    """Test a tensor file edited after its manifest entry was written is rejected"""
    path = tmp_path / "h.bin"
    entry = persistence_service.write_tensor(path, np.zeros(3, dtype=np.float32))
    persistence_service.write_tensor(path, np.ones(3, dtype=np.float32))
    with pytest.raises(IntegrityError):
        persistence_service.read_tensor(path, entry)


def test_checkpoint_roundtrip(polygon, micro_train, tmp_path):
    """Test a checkpoint rebuilds the same architecture with identical weights"""
    e = surrogate_service.build_e(polygon, micro_train)
    manifest = persistence_service.save_checkpoint(tmp_path / "e", "e", e, step=7, seed=3)
    loaded, read_back = persistence_service.load_checkpoint(tmp_path / "e")
    assert weights_hash(loaded) == weights_hash(e)
    assert read_back.step == 7
    assert read_back.tensor_set_hash == manifest.tensor_set_hash
    p = torch.zeros(1, polygon.total_dim)
    assert torch.equal(loaded.eval()(p), e.eval()(p))


def test_checkpoint_overwrite_drops_stale_files(polygon, micro_train, tmp_path):
    """Test saving over a larger checkpoint leaves the same files as a fresh save"""
    e = surrogate_service.build_e(polygon, micro_train)
    optimizer = make_optimizer(e, micro_train)
    e(torch.zeros(2, polygon.total_dim)).mean().backward()
    optimizer.step()

    persistence_service.save_checkpoint(tmp_path / "reused", "e", e, optimizers={"e": optimizer})
    assert list((tmp_path / "reused").glob("o_*.bin"))
    persistence_service.save_checkpoint(tmp_path / "reused", "e", e)
    persistence_service.save_checkpoint(tmp_path / "fresh", "e", e)

    assert not list((tmp_path / "reused").glob("o_*.bin"))
    assert persistence_service.artifact_hash(tmp_path / "reused") == persistence_service.artifact_hash(tmp_path / "fresh")


def test_missing_checkpoint(tmp_path):
    """Test loading from an empty directory reports the missing artifact"""
    with pytest.raises(MissingArtifactError):
        persistence_service.load_checkpoint(tmp_path)


def test_shard_roundtrip(tmp_path):
    """Test shards keep their arrays and provenance"""
    arrays = {"images": random_images(3), "labels": np.arange(3, dtype=np.float32)}
    persistence_service.save_shard(tmp_path / "s", "s", arrays, "abc", 3, 5, 8, meta={"keys": ["s/0"]})
    shard = persistence_service.load_shard(tmp_path / "s")
    assert shard.manifest.count == 3
    assert shard.manifest.spec_hash == "abc"
    assert shard.manifest.meta == {"keys": ["s/0"]}
    assert np.array_equal(shard.arrays["images"], arrays["images"])


def test_empty_shard_is_valid(tmp_path):
    """Test a zero-count shard loads with no arrays"""
    persistence_service.save_shard(tmp_path / "empty", "empty", {"images": np.zeros((0, 3, 8, 8))}, "abc", 0, 0, 8)
    shard = persistence_service.load_shard(tmp_path / "empty")
    assert shard.manifest.count == 0
    assert shard.arrays == {}


def test_shard_count_mismatch(tmp_path):
    """Test arrays must have one row per shard entry"""
    with pytest.raises(IntegrityError):
        persistence_service.save_shard(tmp_path / "s", "s", {"images": random_images(2)}, "abc", 3, 0, 8)

    persistence_service.save_shard(tmp_path / "s", "s", {"images": random_images(3)}, "abc", 3, 0, 8)
    manifest_path = tmp_path / "s" / "manifest.json"
    manifest_path.write_text(manifest_path.read_text().replace('"count": 3', '"count": 4'))
    with pytest.raises(IntegrityError):
        persistence_service.load_shard(tmp_path / "s")


def test_artifact_hash_tracks_content(tmp_path):
    """Test the artifact hash changes when a file changes"""
    persistence_service.write_tensor(tmp_path / "d" / "x.bin", np.zeros(2, dtype=np.float32))
    before = persistence_service.artifact_hash(tmp_path / "d")
    assert persistence_service.artifact_hash(tmp_path / "d") == before
    persistence_service.write_tensor(tmp_path / "d" / "x.bin", np.ones(2, dtype=np.float32))
    assert persistence_service.artifact_hash(tmp_path / "d") != before


def test_tos_resume_replays_identically(polygon, micro_train, tmp_path):
    """Test TOS resumed from a checkpoint logs the same losses as an uninterrupted run"""
    cfg = micro_train.model_copy(update={"iters": 4, "checkpoint_every": 2, "beta": 0.0, "gamma": 0.0, "delta": 0.0})
    e = surrogate_service.build_e(polygon, cfg)
    f = IdentityFeature(cfg.noise_dim)
    t = to_tensor(np.sign(random_images(8, channels=1)))

    def pools():
        return NoisePool("s", cfg.noise_dim, cfg.seed), TensorPool("t", t, cfg.seed)

    full = tos_service.train_tos(cfg, e, f, *pools(), tos_service.build_tos_nets(polygon, cfg, cfg.noise_dim, 1))

    saved = {}

    def on_checkpoint(step, trainer):
        if step == 2:
            optimizers = trainer.optimizers()
            for key, net in {"g": trainer.g, "c": trainer.c, "d": trainer.d}.items():
                persistence_service.save_checkpoint(tmp_path / key, key, net, step, optimizers={key: optimizers[key]})
            saved["step"] = step
        return None

    first = cfg.model_copy(update={"iters": 2})
    tos_service.train_tos(
        first, e, f, *pools(), tos_service.build_tos_nets(polygon, first, first.noise_dim, 1), on_checkpoint=on_checkpoint
    )
    assert saved["step"] == 2

    nets = tuple(persistence_service.load_checkpoint(tmp_path / key)[0] for key in ("g", "c", "d"))

    def restore(trainer):
        for key, optimizer in trainer.optimizers().items():
            persistence_service.restore_optimizers(tmp_path / key, {key: optimizer})

    tail = tos_service.train_tos(cfg, e, f, *pools(), nets, start_step=2, trainer_hook=restore)

    print(f"Full: {full.report.series['L_c'][2:]}, resumed: {tail.report.series['L_c']}")

    assert tail.report.steps == [2, 3]
    for term, values in tail.report.series.items():
        assert values == pytest.approx(full.report.series[term][2:], rel=1e-5)
