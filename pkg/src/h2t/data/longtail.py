import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import multivariate_normal

from ..core.checkpoint import TENSOR_MAGIC, read_container, write_container
from ..core.errors import FormatError, ValidationError
from ..log import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ClassCounts:
    """Per-class training sample counts, sorted from head to tail"""
    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(n) for n in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts:
            raise ValidationError("class counts must not be empty")
        if counts[-1] < 1:
            raise ValidationError(f"every class needs at least one sample, got {counts}")
        if any(a < b for a, b in zip(counts, counts[1:])):
            raise ValidationError(f"class counts must be non-increasing, got {counts}")

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def imbalance_ratio(self) -> float:
        return self.counts[0] / self.counts[-1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)


def longtail_counts(n_max: int, rho: float, num_classes: int) -> ClassCounts:
    """Exponential profile n_i = floor(n_max * rho ** (-i / (C - 1)))"""
    if num_classes < 2:
        raise ValidationError(f"need at least 2 classes, got {num_classes}")
    if rho < 1:
        raise ValidationError(f"imbalance ratio must be >= 1, got {rho}")
    if rho > n_max:
        raise ValidationError(f"imbalance ratio {rho} exceeds n_max={n_max}; tail classes would be empty")
    exponents = -np.arange(num_classes) / (num_classes - 1)
    # the epsilon keeps exact endpoints such as 500 / 100 from flooring to 4
    counts = np.floor(n_max * np.power(float(rho), exponents) + 1e-9).astype(np.int64)
    return ClassCounts(tuple(counts.tolist()))


@dataclass(eq=False)
class DatasetBundle:
    """Training pairs {x, y} with their count profile and generator metadata"""
    features: np.ndarray
    labels: np.ndarray
    counts: ClassCounts
    metadata: Dict = field(default_factory=dict)
    test: Optional["DatasetBundle"] = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValidationError(
                f"features {self.features.shape} and labels {self.labels.shape} do not pair up")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(f"labels must lie in [0, {self.num_classes - 1}]")
        observed = np.bincount(self.labels, minlength=self.num_classes)
        if not np.array_equal(observed, self.counts.as_array()):
            raise ValidationError(
                f"label frequencies {observed.tolist()} disagree with counts {list(self.counts.counts)}")

    @property
    def num_classes(self) -> int:
        return self.counts.num_classes

    @property
    def in_dims(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def class_indices(self) -> List[np.ndarray]:
        """Sample indices of every class, in dataset order"""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum([0, *self.counts.counts])
        return [order[bounds[i]:bounds[i + 1]] for i in range(self.num_classes)]

    def subset(self, classes: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        keep = np.isin(self.labels, np.asarray(classes))
        return self.features[keep], self.labels[keep]


def synth_gaussian_longtail(counts: ClassCounts, in_dims: int, separation: float, seed: int,
                            test_per_class: int = 50, noise_scale: float = 1.0) -> DatasetBundle:
    """Isotropic Gaussian classes with means on a sphere of radius ``separation``.

    The returned training bundle holds exactly ``counts[i]`` samples of class
    i; a balanced test bundle drawn from the same means is attached as
    ``bundle.test``.
    """
    if in_dims < 2:
        raise ValidationError(f"in_dims must be >= 2, got {in_dims}")
    if separation <= 0:
        raise ValidationError(f"separation must be > 0, got {separation}")
    if test_per_class < 1:
        raise ValidationError(f"test_per_class must be >= 1, got {test_per_class}")

    mean_rng, train_rng, test_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    )
    directions = mean_rng.standard_normal((counts.num_classes, in_dims))
    means = separation * directions / np.linalg.norm(directions, axis=1, keepdims=True)

    def draw(per_class: Sequence[int], rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        features, labels = [], []
        for label, (mean, n) in enumerate(zip(means, per_class)):
            dist = multivariate_normal(mean=mean, cov=noise_scale ** 2)
            features.append(np.reshape(dist.rvs(size=n, random_state=rng), (n, in_dims)))
            labels.append(np.full(n, label, dtype=np.int64))
        return np.concatenate(features).astype(np.float32), np.concatenate(labels)

    metadata = {
        "generator": "gaussian",
        "profile": "exponential",
        "seed": int(seed),
        "in_dims": int(in_dims),
        "separation": float(separation),
        "noise_scale": float(noise_scale),
        "test_per_class": int(test_per_class),
        "means": means.tolist(),
    }
    test_counts = ClassCounts((test_per_class,) * counts.num_classes)
    x_test, y_test = draw(test_counts.counts, test_rng)
    x_train, y_train = draw(counts.counts, train_rng)
    logger.debug("Generated %d training and %d test samples over %d classes",
                 len(y_train), len(y_test), counts.num_classes)
    return DatasetBundle(
        features=x_train,
        labels=y_train,
        counts=counts,
        metadata=metadata,
        test=DatasetBundle(x_test, y_test, test_counts, metadata=dict(metadata)),
    )


class SplitTag(str, Enum):
    HEAD = "head"
    MEDIUM = "medium"
    TAIL = "tail"


@dataclass(frozen=True)
class SplitPartition:
    """Head / Medium / Tail tag of every class"""
    head_threshold: float
    tail_threshold: float
    assignment: Tuple[SplitTag, ...]

    def members(self, tag: SplitTag) -> np.ndarray:
        return np.asarray([i for i, t in enumerate(self.assignment) if t is tag], dtype=np.int64)


def partition_splits(counts: ClassCounts, head_threshold: float = 100,
                     tail_threshold: float = 20) -> SplitPartition:
    """Head iff n_i > head_threshold, Tail iff n_i <= tail_threshold, else Medium"""
    if tail_threshold < 0 or head_threshold <= tail_threshold:
        raise ValidationError(
            f"need head_threshold > tail_threshold >= 0, got ({head_threshold}, {tail_threshold})")
    tags = []
    for n in counts.counts:
        if n > head_threshold:
            tags.append(SplitTag.HEAD)
        elif n <= tail_threshold:
            tags.append(SplitTag.TAIL)
        else:
            tags.append(SplitTag.MEDIUM)
    return SplitPartition(head_threshold, tail_threshold, tuple(tags))


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_dataset(path: Union[str, Path], bundle: DatasetBundle) -> Path:
    """Write tensors to an H2TTENS1 container and metadata to a JSON sidecar"""
    path = Path(path)
    tensors = {"features": bundle.features, "labels": bundle.labels.astype(np.float32)}
    sidecar = {"counts": list(bundle.counts.counts), "metadata": bundle.metadata}
    if bundle.test is not None:
        tensors["test_features"] = bundle.test.features
        tensors["test_labels"] = bundle.test.labels.astype(np.float32)
        sidecar["test_counts"] = list(bundle.test.counts.counts)
    write_container(path, TENSOR_MAGIC, tensors)
    with open(_sidecar(path), "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
    return path


def load_dataset(path: Union[str, Path]) -> DatasetBundle:
    path = Path(path)
    tensors = read_container(path, TENSOR_MAGIC)
    sidecar_path = _sidecar(path)
    if not sidecar_path.exists():
        raise FormatError(f"{path}: metadata sidecar {sidecar_path.name} is missing")
    with open(sidecar_path) as f:
        sidecar = json.load(f)

    def labels(name: str) -> np.ndarray:
        return np.rint(tensors[name]).astype(np.int64)

    test = None
    if "test_features" in tensors:
        test = DatasetBundle(tensors["test_features"], labels("test_labels"),
                             ClassCounts(tuple(sidecar["test_counts"])),
                             metadata=dict(sidecar["metadata"]))
    return DatasetBundle(tensors["features"], labels("labels"), ClassCounts(tuple(sidecar["counts"])),
                         metadata=sidecar["metadata"], test=test)
