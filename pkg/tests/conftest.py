import pytest
import numpy as np
import torch
import yaml

from app.config.settings import settings
from app.engine.params import polygon_spec, sprite_spec
from app.schemas import EvalConfig, ExperimentConfig, TrainConfig
from app.services.pipeline_service import RunLayout

# Progress bars only clutter test output
settings.PROGRESS = False

MICRO_RESOLUTION = 8
MICRO_WIDTH = 1.0 / 16.0


@pytest.fixture
def micro_train():
    """Tiny training config: 8x8 images, 1/16 widths, a handful of steps"""
    return TrainConfig(
        resolution=MICRO_RESOLUTION,
        width_multiplier=MICRO_WIDTH,
        batch=4,
        iters=3,
        embed_dim=8,
        noise_dim=8,
        log_every=0,
        checkpoint_every=0,
    )


@pytest.fixture
def polygon():
    return polygon_spec()


@pytest.fixture
def sprite():
    return sprite_spec()


@pytest.fixture
def double_precision():
    """float64 default dtype for finite-difference checks"""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


def micro_experiment(domain: str = "polygon", **train) -> dict:
    """Nested config mapping for a tiny end-to-end run"""
    stages = {key: 2 for key in ("e", "f", "f_eval", "tos", "dcgan", "dtn", "cbar", "tos_fixed_cbar", "dann", "critic")}
    return {
        "name": f"micro-{domain}",
        "device": "cpu",
        "train": {
            "resolution": MICRO_RESOLUTION,
            "width_multiplier": MICRO_WIDTH,
            "batch": 4,
            "embed_dim": 8,
            "noise_dim": 8,
            "log_every": 0,
            "checkpoint_every": 0,
            **({"beta": 0.0, "gamma": 0.0, "delta": 0.0, "alpha": 1.0, "g_pointwise": False} if domain == "polygon" else {}),
            **train,
        },
        "data": {
            "domain": domain,
            "n_pairs": 8,
            "n_holdout": 4,
            "n_t": 8,
            "n_s": 8,
            "f_identities": 3,
            "f_photos_per_identity": 2,
            "f_eval_identities": 3,
            "probe_count": 3,
            "probe_shots": 2,
            "distractors": 4,
        },
        "eval": {"manifold_samples": 6, "fidelity_samples": 4, "grid_rows": 2, "critic_hidden": 8},
        "stages": stages,
    }


@pytest.fixture
def polygon_config():
    return ExperimentConfig.model_validate(micro_experiment("polygon"))


@pytest.fixture
def sprite_config():
    return ExperimentConfig.model_validate(micro_experiment("sprite"))


@pytest.fixture
def eval_config():
    return EvalConfig(critic_hidden=8, critic_lr=1e-2)


@pytest.fixture
def layout(tmp_path):
    return RunLayout(tmp_path / "run")


@pytest.fixture
def polygon_yaml(tmp_path):
    """Micro polygon config written to disk, as the CLI reads it"""
    path = tmp_path / "micro_polygon.yaml"
    path.write_text(yaml.safe_dump(micro_experiment("polygon")), encoding="utf-8")
    return path


def rel_error(analytic: float, numeric: float) -> float:
    """Relative error with an absolute floor for near-zero gradients"""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)


def random_images(n: int, channels: int = 3, resolution: int = MICRO_RESOLUTION, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(n, channels, resolution, resolution)).astype(np.float32)
