import json

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_array_equal

from h2t.analytics.metrics_analyzer import MetricsAnalyzer
from h2t.core.errors import ValidationError
from h2t.core.metrics import MetricsReport
from h2t.data.longtail import ClassCounts, SplitTag, partition_splits


@pytest.fixture
def partition():
    # head: 0, medium: 1, tail: 2
    return partition_splits(ClassCounts((200, 50, 10)))


def test_report_from_predictions(partition):
    labels = np.array([0, 0, 0, 0, 1, 1, 2, 2])
    predictions = np.array([0, 0, 0, 1, 1, 0, 0, 0])
    report = MetricsReport.create_from_predictions(labels, predictions, 3, partition)

    assert report.overall == pytest.approx(4 / 8)
    assert report.head == pytest.approx(3 / 4)
    assert report.medium == pytest.approx(1 / 2)
    assert report.tail == 0.0
    assert_array_equal(report.confusion, [[3, 1, 0], [1, 1, 0], [2, 0, 0]])
    assert report.confusion.sum() == len(labels)


def test_split_without_samples_is_none(partition):
    report = MetricsReport.create_from_predictions(np.array([0, 1]), np.array([0, 1]), 3, partition)
    assert report.tail is None
    assert np.isnan(report.per_class[2])
    assert report.to_dict()["per_class"][2] is None


def test_split_means_are_support_weighted(partition):
    big = partition_splits(ClassCounts((300, 200, 10)))
    labels = np.array([0, 0, 0, 1])
    report = MetricsReport.create_from_predictions(labels, np.array([0, 0, 0, 0]), 3, big)
    # classes 0 and 1 are both head: (3 + 0) / 4, not (1 + 0) / 2
    assert report.head == pytest.approx(0.75)


def test_invalid_predictions(partition):
    with pytest.raises(ValidationError):
        MetricsReport.create_from_predictions(np.array([0, 1]), np.array([0]), 3, partition)
    with pytest.raises(ValidationError):
        MetricsReport.create_from_predictions(np.array([0, 1]), np.array([0, 3]), 3, partition)


@pytest.mark.parametrize("labels, predictions", [([0, -1], [0, 1]), ([0, 1], [-2, 1])])
def test_negative_labels_are_rejected(partition, labels, predictions):
    with pytest.raises(ValidationError):
        MetricsReport.create_from_predictions(np.array(labels), np.array(predictions), 3, partition)


def test_analyzer_writes_json_and_csv(tmp_path, partition):
    report = MetricsReport.create_from_predictions(np.array([0, 1, 2]), np.array([0, 1, 1]), 3, partition)
    analyzer = MetricsAnalyzer(tmp_path)
    analyzer.save_metrics(report)

    with open(tmp_path / "metrics.json") as f:
        payload = json.load(f)
    assert payload["all"] == pytest.approx(2 / 3)
    assert payload["tail"] == 0.0
    df = pd.read_csv(tmp_path / "metrics.csv")
    assert list(df.columns) == ["class", "split", "support", "correct", "accuracy"]
    assert df["split"].tolist() == [tag.value for tag in (SplitTag.HEAD, SplitTag.MEDIUM, SplitTag.TAIL)]
