"""Class-level samplers for the two training branches.

A sampler first draws a class from its rate vector, then a sample of that
class uniformly with replacement. Streams are keyed by (seed, epoch, stream)
so a branch can be replayed exactly.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Optional, Sequence

import numpy as np

from ..core.errors import ValidationError
from .longtail import ClassCounts

FUSED_STREAM = 1
FUSING_STREAM = 2


class SamplerKind(str, Enum):
    CLASS_BALANCED = "class_balanced"
    INSTANCE_WISE = "instance_wise"
    REVERSE = "reverse"

    @property
    def short(self) -> str:
        return {"class_balanced": "BS", "instance_wise": "IS", "reverse": "RS"}[self.value]


def sampler_rates(kind: SamplerKind, counts: ClassCounts) -> np.ndarray:
    """Per-class draw probabilities.

    ClassBalanced: 1/C. InstanceWise: n_i/N. Reverse: (1/n_i) / sum_j (1/n_j).
    """
    kind = SamplerKind(kind)
    n = counts.as_array().astype(np.float64)
    if kind is SamplerKind.CLASS_BALANCED:
        rates = np.full(len(n), 1.0 / len(n))
    elif kind is SamplerKind.INSTANCE_WISE:
        rates = n / n.sum()
    else:
        inverse = 1.0 / n
        rates = inverse / inverse.sum()
    return rates


@dataclass(frozen=True, eq=False)
class SamplerSpec:
    kind: SamplerKind
    counts: ClassCounts
    seed: int
    rates: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SamplerKind(self.kind))
        rates = self.rates if self.rates is not None else sampler_rates(self.kind, self.counts)
        rates = np.asarray(rates, dtype=np.float64)
        if len(rates) != self.counts.num_classes:
            raise ValidationError(f"{len(rates)} rates for {self.counts.num_classes} classes")
        if (rates <= 0).any() or abs(rates.sum() - 1.0) > 1e-9:
            raise ValidationError("sampling rates must be positive and sum to 1")
        object.__setattr__(self, "rates", rates)


def stream_rng(seed: int, epoch: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, epoch, stream) triple"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), int(stream)]))


def draw_classes(spec: SamplerSpec, num_draws: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(spec.rates)
    picks = np.searchsorted(cdf, rng.random(num_draws), side="right")
    return np.minimum(picks, len(cdf) - 1)


def draw_indices(spec: SamplerSpec, class_indices: Sequence[np.ndarray], num_draws: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Sample indices: class from the rates, then a member uniformly with replacement"""
    classes = draw_classes(spec, num_draws, rng)
    sizes = np.asarray([len(members) for members in class_indices], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    members = np.concatenate([np.asarray(m, dtype=np.int64) for m in class_indices])
    offsets = np.minimum(np.floor(rng.random(num_draws) * sizes[classes]).astype(np.int64),
                         sizes[classes] - 1)
    return members[starts[classes] + offsets]


def draw_epoch(spec: SamplerSpec, class_indices: Sequence[np.ndarray], epoch_len: int,
               batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """``epoch_len // batch_size`` batches of sample indices"""
    if batch_size < 1 or epoch_len < batch_size:
        raise ValidationError(
            f"need epoch_len >= batch_size >= 1, got epoch_len={epoch_len}, batch_size={batch_size}")
    num_batches = epoch_len // batch_size
    flat = draw_indices(spec, class_indices, num_batches * batch_size, rng)
    return list(flat.reshape(num_batches, batch_size))


def iter_paired_batches(fused: SamplerSpec, fusing: SamplerSpec, class_indices: Sequence[np.ndarray],
                        epoch: int, epoch_len: int, batch_size: int) -> Iterator[tuple]:
    """Positionally paired (balanced, instance) batches for one epoch.

    Each branch has its own stream so the fused-branch batches do not depend
    on the fusing sampler.
    """
    fused_batches = draw_epoch(fused, class_indices, epoch_len, batch_size,
                               stream_rng(fused.seed, epoch, FUSED_STREAM))
    fusing_batches = draw_epoch(fusing, class_indices, epoch_len, batch_size,
                                stream_rng(fusing.seed, epoch, FUSING_STREAM))
    return zip(fused_batches, fusing_batches)


def empirical_rate_error(spec: SamplerSpec, num_draws: int, rng: np.random.Generator) -> float:
    """L1 distance between empirical class frequencies and the rates"""
    if num_draws < 1:
        raise ValidationError(f"num_draws must be >= 1, got {num_draws}")
    classes = draw_classes(spec, num_draws, rng)
    empirical = np.bincount(classes, minlength=len(spec.rates)) / num_draws
    return float(np.abs(empirical - spec.rates).sum())
