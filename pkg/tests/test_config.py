from pathlib import Path

import pytest

from h2t.core.errors import ConfigError
from h2t.core.model import BackboneKind
from h2t.experiments.config import ExperimentConfig, config_from_dict, dump_config, load_config

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


def test_shipped_default_config():
    config = load_config(DEFAULT_CONFIG)
    assert config.dataset.num_classes == 20
    assert config.dataset.rho == 100.0
    assert config.backbone_spec().kind is BackboneKind.MLP
    assert config.backbone_spec().feature_dim == 32
    assert config.schedule.stage2_epochs == 10
    assert config.schedule.resolved_stage2_lr == 0.01
    assert config.fusion.p == 0.3
    assert config.seeds == [0, 1, 2, 3, 4]
    assert config.split_thresholds == (100.0, 20.0)


def test_round_trip_is_lossless(tmp_path):
    config = load_config(DEFAULT_CONFIG)
    again = load_config(dump_config(config, tmp_path / "echo.toml"))
    assert again == config
    assert dump_config(again, tmp_path / "echo2.toml").read_bytes() == (tmp_path / "echo.toml").read_bytes()


def test_round_trip_of_a_conv_config(tmp_path):
    config = config_from_dict({
        "dataset": {"in_dims": 16},
        "backbone": {"kind": "tiny_conv", "widths": [4, 8], "input_shape": [1, 4, 4]},
    })
    assert config.backbone_spec().feature_map_shape == (8, 1, 1)
    assert load_config(dump_config(config, tmp_path / "conv.toml")) == config


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("")
    assert load_config(path) == ExperimentConfig()


@pytest.mark.parametrize("data, field", [
    ({"dataset": {"rho": 0.5}}, "dataset.rho"),
    ({"dataset": {"colour": 1}}, "dataset.colour"),
    ({"fusion": {"p": 1.5}}, "fusion.p"),
    ({"fusion": {"strategy": "sideways"}}, "fusion.strategy"),
    ({"samplers": {"fusing": "uniform"}}, "samplers.fusing"),
    ({"sweep": {"p_values": [0.1, 2.0]}}, "sweep.p_values"),
    ({"schedule": {"momentum": 1.5}}, "schedule"),
    ({"backbone": {"kind": "resnet"}}, "backbone.kind"),
    ({"backbone": {"kind": "tiny_conv", "widths": [4]}}, "backbone"),
    ({"seeds": []}, "seeds"),
    ({"threshold_scale": 0}, "threshold_scale"),
    ({"extra": 1}, "extra"),
    ({"dataset": 3}, "dataset"),
])
def test_field_level_errors(data, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    assert info.value.field == field


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[dataset\nnum_classes = ")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_threshold_scale():
    config = config_from_dict({"threshold_scale": 0.5})
    assert config.split_thresholds == (50.0, 10.0)
