import numpy as np
import pytest

from h2t.core.model import BackboneKind, BackboneSpec, ModelState
from h2t.data.longtail import longtail_counts, partition_splits, synth_gaussian_longtail
from h2t.experiments.config import (BackboneConfig, DatasetConfig, ExperimentConfig, SweepConfig,
                                    dump_config)
from h2t.training.trainer import TrainSchedule


@pytest.fixture
def small_counts():
    # (60, 37, 23, 15, 9, 6)
    return longtail_counts(60, 10, 6)


@pytest.fixture
def small_data(small_counts):
    return synth_gaussian_longtail(small_counts, in_dims=4, separation=4.0, seed=0, test_per_class=10)


@pytest.fixture
def small_partition(small_counts):
    # head: 60, 37; medium: 23, 15; tail: 9, 6
    return partition_splits(small_counts, head_threshold=30, tail_threshold=10)


@pytest.fixture
def mlp_spec():
    return BackboneSpec(BackboneKind.MLP, in_dims=4, widths=(8, 6))


@pytest.fixture
def mlp_model(mlp_spec):
    return ModelState.initialize(mlp_spec, num_classes=6, seed=0)


@pytest.fixture
def fast_schedule():
    return TrainSchedule(stage1_epochs=3, stage2_epochs=2, stage1_lr=0.05, stage2_lr=0.01,
                         batch_size=16, seed=0)


@pytest.fixture
def tiny_config(tmp_path):
    return ExperimentConfig(
        dataset=DatasetConfig(num_classes=6, n_max=60, rho=10.0, in_dims=4, test_per_class=10),
        backbone=BackboneConfig(widths=[8, 6]),
        schedule=TrainSchedule(stage1_epochs=2, stage2_epochs=1, stage1_lr=0.05, stage2_lr=0.01,
                               batch_size=16),
        sweep=SweepConfig(p_values=[0.0, 0.5], rationale_p_values=[0.5]),
        output_dir=str(tmp_path / "run"),
        head_threshold=30.0,
        tail_threshold=10.0,
        seeds=[0, 1],
    ).validate()


@pytest.fixture
def tiny_config_file(tiny_config, tmp_path):
    return dump_config(tiny_config, tmp_path / "tiny.toml")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
