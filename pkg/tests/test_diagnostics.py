import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_array_equal

from h2t.analytics.diagnostics import (boundary_grid, dump_embeddings, evaluate, predict, prediction_histogram,
                                       split_mass)
from h2t.analytics.metrics_analyzer import MetricsAnalyzer
from h2t.analytics.plot_generator import PlotGenerator
from h2t.core.checkpoint import TENSOR_MAGIC, read_container
from h2t.core.errors import ValidationError
from h2t.core.model import BackboneKind, BackboneSpec, ModelState, backbone_forward, classifier_forward
from h2t.data.longtail import ClassCounts, SplitTag, partition_splits


@pytest.fixture
def planar():
    """A linear model on 2-D inputs whose class 1 wins for x > 0"""
    model = ModelState.initialize(BackboneSpec(BackboneKind.MLP, in_dims=2), 2, seed=0)
    model.classifier["classifier.weight"].tensor.data = np.array([[-1.0, 1.0], [0.0, 0.0]], dtype=np.float32)
    return model


def test_ties_go_to_the_lower_index():
    model = ModelState.initialize(BackboneSpec(BackboneKind.MLP, in_dims=2), 3, seed=0)
    model.classifier["classifier.weight"].tensor.data = np.zeros((2, 3), dtype=np.float32)
    assert (predict(model, np.ones((4, 2), dtype=np.float32)) == 0).all()


def test_evaluate(mlp_model, small_data, small_partition):
    report = evaluate(mlp_model, small_data.test, small_partition)
    assert 0.0 <= report.overall <= 1.0
    assert report.confusion.sum() == len(small_data.test)


def test_histogram_is_normalized(mlp_model, small_data, small_partition):
    hist = prediction_histogram(mlp_model, small_data.test, small_partition)
    assert hist.shape == (6,)
    assert abs(hist.sum() - 1.0) <= 1e-9
    mass = split_mass(hist, small_partition)
    assert sum(mass.values()) == pytest.approx(1.0)
    assert set(mass) == set(SplitTag)


def test_histogram_needs_tail_classes(mlp_model, small_data, small_counts):
    no_tail = partition_splits(small_counts, head_threshold=30, tail_threshold=1)
    with pytest.raises(ValidationError):
        prediction_histogram(mlp_model, small_data.test, no_tail)


def test_boundary_grid_rows_follow_y(planar):
    grid = boundary_grid(planar, bounds=((-1, 1), (-2, 2)), resolution=5)
    assert grid.labels.shape == (5, 5)
    # class 1 for x > 0 on every row; x = 0 ties to class 0
    assert (grid.labels[:, 3:] == 1).all()
    assert (grid.labels[:, :3] == 0).all()
    frame = grid.to_frame()
    assert list(frame.columns) == ["x", "y", "label"]
    assert len(frame) == 25
    assert frame["y"].iloc[0] == -2 and frame["x"].iloc[1] == -0.5


def test_boundary_grid_needs_planar_inputs(mlp_model):
    with pytest.raises(ValidationError):
        boundary_grid(mlp_model)


def test_embedding_dump(tmp_path, mlp_model, small_data):
    path = dump_embeddings(tmp_path / "emb.h2t", mlp_model, small_data)
    tensors = read_container(path, TENSOR_MAGIC)
    assert tensors["embeddings"].shape == (150, 6)
    np.testing.assert_array_equal(tensors["labels"], small_data.labels)


def test_plots_are_reproducible(tmp_path, planar):
    partition = partition_splits(ClassCounts((150, 50)), 100, 60)
    grid = boundary_grid(planar, resolution=20)
    paths = []
    for name in ("a", "b"):
        plots = PlotGenerator(tmp_path / name)
        paths.append((plots.plot_boundary(grid, np.zeros((3, 2)), np.array([0, 1, 1])),
                      plots.plot_histogram(np.array([0.25, 0.75]), partition)))
    for first, second in zip(*paths):
        assert first.read_bytes() == second.read_bytes()
        assert first.read_bytes().lstrip().startswith(b"<?xml")


def test_histogram_and_grid_tables(tmp_path, planar, small_partition):
    analyzer = MetricsAnalyzer(tmp_path)
    analyzer.save_histogram(np.full(6, 1 / 6), small_partition)
    analyzer.save_grid(boundary_grid(planar, resolution=4))
    hist = pd.read_csv(tmp_path / "prediction_histogram.csv")
    assert hist["frequency"].sum() == pytest.approx(1.0)
    assert len(pd.read_csv(tmp_path / "boundary.csv")) == 16


def test_boundary_grid_matches_direct_argmax():
    model = ModelState.initialize(BackboneSpec(BackboneKind.MLP, in_dims=2, widths=(8,)), 4, seed=3)
    grid = boundary_grid(model, bounds=((-3, 3), (-2, 4)), resolution=40)
    rng = np.random.default_rng(5)
    rows, cols = rng.integers(0, 40, size=100), rng.integers(0, 40, size=100)
    points = np.stack([grid.xs[cols], grid.ys[rows]], axis=1).astype(np.float32)
    _, pooled = backbone_forward(model, points)
    direct = classifier_forward(model, pooled).data.argmax(axis=1)
    assert_array_equal(grid.labels[rows, cols], direct)
