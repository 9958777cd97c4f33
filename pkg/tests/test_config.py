import pytest
import yaml

from app.config.loader import dump_experiment_config, load_experiment_config
from app.config.settings import settings
from app.exceptions import ConfigError
from app.schemas import TrainConfig


def test_flag_beats_env_beats_file(polygon_yaml, monkeypatch):
    """Test precedence: flag over environment over file"""
    assert load_experiment_config(str(polygon_yaml)).train.seed == 0

    monkeypatch.setenv("TOSFORGE_SEED", "11")
    assert load_experiment_config(str(polygon_yaml)).train.seed == 11

    config = load_experiment_config(str(polygon_yaml), {"seed": 7, "resolution": None})
    assert config.train.seed == 7
    assert config.train.resolution == 8


def test_invalid_resolution(polygon_yaml):
    """Test resolutions outside the supported set are config errors"""
    with pytest.raises(ConfigError) as exc_info:
        load_experiment_config(str(polygon_yaml), {"resolution": 48})

    print(f"Error: {exc_info.value.detail}")

    assert exc_info.value.status_code == 2


def test_negative_weight():
    """Test loss weights cannot be negative"""
    with pytest.raises(ValueError):
        TrainConfig(beta=-1.0)


def test_unknown_key(tmp_path):
    """Test misspelled config keys are rejected"""
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"train": {"aplha": 1.0}}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_experiment_config(str(path))


def test_missing_or_malformed_file(tmp_path):
    """Test missing files and non-mapping YAML are config errors"""
    with pytest.raises(ConfigError):
        load_experiment_config(str(tmp_path / "absent.yaml"))
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_experiment_config(str(path))


@pytest.mark.parametrize("name", ["polygon", "sprite", "sprite_vr"])
def test_reference_configs_load(name):
    """Test every shipped reference config validates"""
    config = load_experiment_config(str(settings.REFERENCE_CONFIGS[name]))
    assert config.data.domain == ("polygon" if name == "polygon" else "sprite")


def test_polygon_reference_weights():
    """Test the polygon reference reduces to compliance plus GAN"""
    train = load_experiment_config(str(settings.REFERENCE_CONFIGS["polygon"])).train
    assert (train.alpha, train.beta, train.gamma, train.delta) == (1.0, 0.0, 0.0, 0.0)


def test_dump_and_reload(polygon_config, tmp_path):
    """Test a dumped config reloads with the same hash"""
    dump_experiment_config(polygon_config, tmp_path / "config.yaml")
    assert load_experiment_config(str(tmp_path / "config.yaml")).config_hash() == polygon_config.config_hash()


def test_stage_config(polygon_config):
    """Test each stage trains for its own iteration count"""
    assert polygon_config.stage_config("tos").iters == 2
    assert polygon_config.stage_config("tos").alpha == polygon_config.train.alpha
