from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
import pandas as pd

from ..core.checkpoint import TENSOR_MAGIC, write_container
from ..core.errors import ValidationError
from ..core.metrics import MetricsReport
from ..core.model import ModelState, pooled_features, predict_logits
from ..data.longtail import DatasetBundle, SplitPartition, SplitTag


def predict(model: ModelState, x: np.ndarray) -> np.ndarray:
    """Argmax labels; ties go to the lower class index"""
    return predict_logits(model, x).argmax(axis=1)


def evaluate(model: ModelState, test: DatasetBundle, partition: SplitPartition) -> MetricsReport:
    if test.num_classes != model.num_classes:
        raise ValidationError(
            f"test set has {test.num_classes} classes, model predicts {model.num_classes}")
    return MetricsReport.create_from_predictions(
        test.labels, predict(model, test.features), model.num_classes, partition)


def prediction_histogram(model: ModelState, test: DatasetBundle,
                         partition: SplitPartition) -> np.ndarray:
    """Frequency of every predicted label over the tail-class samples"""
    tail = partition.members(SplitTag.TAIL)
    if len(tail) == 0:
        raise ValidationError("partition has no tail classes")
    x, _ = test.subset(tail)
    if len(x) == 0:
        raise ValidationError("no tail-class samples to histogram")
    counts = np.bincount(predict(model, x), minlength=model.num_classes)
    return counts / counts.sum()


def split_mass(histogram: np.ndarray, partition: SplitPartition) -> Dict[SplitTag, float]:
    """Probability mass of a prediction histogram on each split"""
    return {tag: float(histogram[partition.members(tag)].sum()) for tag in SplitTag}


@dataclass(eq=False)
class BoundaryGrid:
    """Predicted labels on a resolution x resolution grid; row r holds ys[r]"""
    xs: np.ndarray
    ys: np.ndarray
    labels: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        gx, gy = np.meshgrid(self.xs, self.ys)
        return pd.DataFrame({'x': gx.ravel(), 'y': gy.ravel(), 'label': self.labels.ravel()})


def boundary_grid(model: ModelState, bounds: Tuple[Tuple[float, float], Tuple[float, float]] = ((-5, 5), (-5, 5)),
                  resolution: int = 200) -> BoundaryGrid:
    if model.spec.in_dims != 2:
        raise ValidationError(f"boundary grids need 2-D inputs, model takes {model.spec.in_dims}")
    if resolution < 1:
        raise ValidationError(f"resolution must be >= 1, got {resolution}")
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    xs = np.linspace(x_lo, x_hi, resolution)
    ys = np.linspace(y_lo, y_hi, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float32)
    return BoundaryGrid(xs=xs, ys=ys, labels=predict(model, points).reshape(resolution, resolution))


def dump_embeddings(path: Union[str, Path], model: ModelState, data: DatasetBundle) -> Path:
    """Pooled features and labels of ``data`` as an H2TTENS1 container"""
    return write_container(path, TENSOR_MAGIC, {
        'embeddings': pooled_features(model, data.features),
        'labels': data.labels.astype(np.float32),
    })
