import dataclasses

import pytest
from click.testing import CliRunner

from h2t.cli import EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC, cli
from h2t.experiments.config import BackboneConfig, dump_config


@pytest.fixture
def runner():
    return CliRunner()


def test_info(runner):
    result = runner.invoke(cli, ['info'])
    assert result.exit_code == 0
    assert 'sweep-p' in result.output


def test_train(runner, tiny_config_file, tmp_path):
    out = tmp_path / "cli_run"
    result = runner.invoke(cli, ['train', '--config', str(tiny_config_file), '--out', str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "MANIFEST").exists()


def test_seed_override_is_echoed(runner, tiny_config_file, tmp_path):
    out = tmp_path / "seeded"
    result = runner.invoke(cli, ['train', '--config', str(tiny_config_file), '--seed', '7', '--out', str(out)])
    assert result.exit_code == 0, result.output
    assert 'seed = 7' in (out / "config.toml").read_text()


def test_stage2_only_needs_from(runner, tiny_config_file):
    result = runner.invoke(cli, ['train', '--config', str(tiny_config_file), '--stage2-only'])
    assert result.exit_code == 2
    assert '--from' in result.output


def test_sweep_prints_medians(runner, tiny_config_file, tmp_path):
    result = runner.invoke(cli, ['sweep-p', '--config', str(tiny_config_file), '--p-values', '0,0.5',
                                 '--seeds', '0', '--out', str(tmp_path / "sweep")])
    assert result.exit_code == 0, result.output
    assert 'median' in result.output
    assert (tmp_path / "sweep" / "sweep_p.csv").exists()


def test_unknown_config_key(runner, tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('[dataset]\ncolour = "blue"\n')
    result = runner.invoke(cli, ['train', '--config', str(path)])
    assert result.exit_code == EXIT_CONFIG
    assert 'dataset.colour' in result.output


def test_invalid_value(runner, tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('[fusion]\np = 2.0\n')
    result = runner.invoke(cli, ['sweep-p', '--config', str(path)])
    assert result.exit_code == EXIT_CONFIG


def test_missing_run_directory(runner, tmp_path):
    result = runner.invoke(cli, ['diagnose', str(tmp_path / "nowhere")])
    assert result.exit_code == EXIT_FORMAT


def test_corrupt_checkpoint(runner, tiny_config_file, tmp_path):
    out = tmp_path / "run"
    assert runner.invoke(cli, ['train', '--config', str(tiny_config_file), '--out', str(out)]).exit_code == 0
    ckpt = out / "stage2.ckpt"
    blob = bytearray(ckpt.read_bytes())
    blob[-5] ^= 0xFF  # last data byte, ahead of the CRC trailer
    ckpt.write_bytes(bytes(blob))
    result = runner.invoke(cli, ['diagnose', str(out)])
    assert result.exit_code == EXIT_FORMAT


def test_divergence_exit_code(runner, tiny_config, tmp_path):
    diverging = tiny_config.replace(
        backbone=BackboneConfig(widths=[]),
        schedule=dataclasses.replace(tiny_config.schedule, stage1_lr=1e38, momentum=0.0),
    )
    path = dump_config(diverging, tmp_path / "diverging.toml")
    result = runner.invoke(cli, ['train', '--config', str(path), '--out', str(tmp_path / "run")])
    assert result.exit_code == EXIT_NUMERIC


@pytest.mark.parametrize("command", ["train", "gen-data"])
def test_jobs_is_only_offered_by_sweeps(runner, tiny_config_file, command):
    result = runner.invoke(cli, [command, '--config', str(tiny_config_file), '--jobs', '2'])
    assert result.exit_code == 2
    assert 'No such option' in result.output
