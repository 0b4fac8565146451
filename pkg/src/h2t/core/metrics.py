from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..data.longtail import SplitPartition, SplitTag
from .errors import H2TError, ValidationError


@dataclass(eq=False)
class MetricsReport:
    """Top-1 accuracy overall, per split and per class, plus the confusion matrix.

    Rows of ``confusion`` are true labels, columns predictions. Splits or
    classes without test samples are reported as ``None`` / NaN, not zero.
    """
    overall: float
    split: Dict[SplitTag, Optional[float]]
    per_class: np.ndarray
    confusion: np.ndarray
    partition: SplitPartition

    @classmethod
    def create_from_predictions(cls, labels: np.ndarray, predictions: np.ndarray,
                                num_classes: int, partition: SplitPartition) -> 'MetricsReport':
        """Build a report from true and predicted labels"""
        labels = np.asarray(labels, dtype=np.int64)
        predictions = np.asarray(predictions, dtype=np.int64)
        if labels.shape != predictions.shape or labels.size == 0:
            raise ValidationError("need equally many (and at least one) labels and predictions")
        if min(labels.min(), predictions.min()) < 0 or max(labels.max(), predictions.max()) >= num_classes:
            raise ValidationError(f"labels must lie in [0, {num_classes - 1}]")
        if len(partition.assignment) != num_classes:
            raise ValidationError(
                f"partition covers {len(partition.assignment)} classes, model has {num_classes}")

        confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(confusion, (labels, predictions), 1)
        support = confusion.sum(axis=1)
        correct = np.diag(confusion)
        per_class = np.full(num_classes, np.nan)
        np.divide(correct, support, out=per_class, where=support > 0)

        split = {}
        for tag in SplitTag:
            members = partition.members(tag)
            total = support[members].sum() if len(members) else 0
            split[tag] = float(correct[members].sum() / total) if total else None

        report = cls(
            overall=float(correct.sum() / confusion.sum()),
            split=split,
            per_class=per_class,
            confusion=confusion,
            partition=partition,
        )
        report.check_consistency()
        return report

    @property
    def head(self) -> Optional[float]:
        return self.split[SplitTag.HEAD]

    @property
    def medium(self) -> Optional[float]:
        return self.split[SplitTag.MEDIUM]

    @property
    def tail(self) -> Optional[float]:
        return self.split[SplitTag.TAIL]

    def check_consistency(self, atol: float = 1e-9):
        """Overall accuracy is the trace ratio; split accuracies are the
        support-weighted means of their members' per-class accuracies."""
        trace_ratio = np.trace(self.confusion) / self.confusion.sum()
        if abs(trace_ratio - self.overall) > atol:
            raise H2TError(f"overall accuracy {self.overall} != confusion trace ratio {trace_ratio}")
        support = self.confusion.sum(axis=1)
        for tag, value in self.split.items():
            members = [i for i in self.partition.members(tag) if support[i] > 0]
            if not members:
                if value is not None:
                    raise H2TError(f"{tag.value} has no test samples but reports {value}")
                continue
            weighted = np.dot(self.per_class[members], support[members]) / support[members].sum()
            if abs(weighted - value) > atol:
                raise H2TError(f"{tag.value} accuracy {value} != weighted class mean {weighted}")

    def to_dict(self) -> Dict:
        return {
            'all': self.overall,
            **{tag.value: value for tag, value in self.split.items()},
            'per_class': [None if np.isnan(v) else float(v) for v in self.per_class],
            'confusion': self.confusion.tolist(),
        }
