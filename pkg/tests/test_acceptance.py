"""End-to-end directional checks on the default synthetic config (slow)"""
import dataclasses
from pathlib import Path

import numpy as np
import pytest

from h2t.analytics.diagnostics import evaluate, prediction_histogram, split_mass
from h2t.data.longtail import SplitTag
from h2t.data.sampling import SamplerKind
from h2t.experiments.config import load_config
from h2t.experiments.runner import build_dataset, build_partition
from h2t.training.trainer import finetune_stage2_h2t, train_stage1

pytestmark = pytest.mark.slow

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


@pytest.fixture(scope="module")
def setup():
    config = load_config(DEFAULT_CONFIG)
    data = build_dataset(config)
    return config, data, build_partition(config, data)


@pytest.fixture(scope="module")
def stage1(setup):
    config, data, _ = setup
    model, _ = train_stage1(data, config.backbone_spec(), config.schedule)
    return model


def _median_split_accuracy(setup, stage1, p, fusing=SamplerKind.INSTANCE_WISE):
    config, data, partition = setup
    reports = []
    for seed in config.seeds:
        sched = dataclasses.replace(config.schedule, seed=seed)
        model, _ = finetune_stage2_h2t(stage1, data, sched, p, strategy=config.fusion.strategy,
                                       fusing_sampler=fusing, fused_sampler=SamplerKind.CLASS_BALANCED)
        reports.append(evaluate(model, data.test, partition))
    return {
        'head': np.median([r.head for r in reports]),
        'tail': np.median([r.tail for r in reports]),
        'all': np.median([r.overall for r in reports]),
    }


def test_fusion_helps_tail_classes(setup, stage1):
    baseline = _median_split_accuracy(setup, stage1, 0.0)
    fused = _median_split_accuracy(setup, stage1, 0.3)
    assert fused['tail'] > baseline['tail']


def test_full_substitution_hurts_head_classes(setup, stage1):
    baseline = _median_split_accuracy(setup, stage1, 0.0)
    replaced = _median_split_accuracy(setup, stage1, 1.0)
    assert replaced['head'] < baseline['head']


def test_instance_wise_fusing_beats_reverse(setup, stage1):
    instance_wise = _median_split_accuracy(setup, stage1, 0.3, SamplerKind.INSTANCE_WISE)
    reverse = _median_split_accuracy(setup, stage1, 0.3, SamplerKind.REVERSE)
    assert instance_wise['all'] >= reverse['all']


def test_stage1_pushes_tail_samples_to_head_classes(setup):
    config, data, partition = setup
    head_mass, tail_mass = [], []
    for seed in config.seeds:
        sched = dataclasses.replace(config.schedule, seed=seed)
        model, _ = train_stage1(data, config.backbone_spec(), sched)
        mass = split_mass(prediction_histogram(model, data.test, partition), partition)
        head_mass.append(mass[SplitTag.HEAD])
        tail_mass.append(mass[SplitTag.TAIL])
    assert np.median(head_mass) > np.median(tail_mass)
