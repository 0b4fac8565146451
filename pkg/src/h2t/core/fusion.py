"""Head-to-tail channel fusion.

A fraction ``p`` of the feature-map channels of the fused (class-balanced)
branch is replaced by the same channels of the fusing (instance-wise) branch.
``p`` is the replaced fraction and ``int(d * p)`` channels are replaced, so
``p = 0`` returns the fused branch and ``p = 1`` the fusing branch. Labels of
the fusing branch never enter here.
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import Tensor


class SelectionStrategy(str, Enum):
    RANDOM = "random"
    FIRST = "first"
    MIDDLE = "middle"
    LAST = "last"


@dataclass(frozen=True, eq=False)
class FusionMask:
    """Channels taken from the fusing branch; the rest are retained"""
    d: int
    p: float
    replaced: np.ndarray
    strategy: SelectionStrategy

    @property
    def k(self) -> int:
        return len(self.replaced)

    @property
    def retained(self) -> np.ndarray:
        keep = np.ones(self.d, dtype=bool)
        keep[self.replaced] = False
        return np.flatnonzero(keep)


def fused_channel_count(d: int, p: float) -> int:
    # int() truncation, matching the reference implementation
    return int(d * p)


def select_channels(d: int, p: float, strategy: Union[SelectionStrategy, str] = SelectionStrategy.RANDOM,
                    rng: Optional[np.random.Generator] = None) -> FusionMask:
    strategy = SelectionStrategy(strategy)
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"fusion ratio p must lie in [0, 1], got {p}")
    if d < 1:
        raise ValidationError(f"channel count d must be >= 1, got {d}")
    k = fused_channel_count(d, p)

    if strategy is SelectionStrategy.FIRST:
        replaced = np.arange(k)
    elif strategy is SelectionStrategy.MIDDLE:
        start = (d - k) // 2
        replaced = np.arange(start, start + k)
    elif strategy is SelectionStrategy.LAST:
        replaced = np.arange(d - k, d)
    else:
        if rng is None:
            raise ValidationError("random channel selection needs an rng")
        # fresh permutation on every call
        replaced = np.sort(rng.permutation(d)[:k])

    replaced = replaced.astype(np.int64)
    replaced.setflags(write=False)
    return FusionMask(d=d, p=float(p), replaced=replaced, strategy=strategy)


def fuse_feature_maps(fused_branch: Union[Tensor, np.ndarray], fusing_branch: Union[Tensor, np.ndarray],
                      mask: FusionMask) -> Tensor:
    """Replace the masked channels of ``fused_branch`` with those of ``fusing_branch``.

    Both inputs are (batch, d, w_F, h_F) and positionally paired; neither is
    mutated. The result stays on the tape of both inputs.
    """
    fused_branch = fused_branch if isinstance(fused_branch, Tensor) else Tensor(fused_branch)
    fusing_branch = fusing_branch if isinstance(fusing_branch, Tensor) else Tensor(fusing_branch)
    if fused_branch.shape != fusing_branch.shape:
        raise ShapeError("fusing branch feature maps", fused_branch.shape, fusing_branch.shape)
    if fused_branch.ndim < 2 or fused_branch.shape[1] != mask.d:
        raise ShapeError("feature maps for mask", (None, mask.d), fused_branch.shape)
    return fused_branch.substitute_channels(fusing_branch, mask.replaced)


def fuse_feature_map_list(fused_branches: Sequence[Tensor], fusing_branches: Sequence[Tensor],
                          p: float, strategy: Union[SelectionStrategy, str],
                          rng: Optional[np.random.Generator] = None) -> List[Tensor]:
    """Fuse element-wise paired lists (one entry per expert), one mask each.

    Library entry point for multi-branch backbones; the single-backbone trainer
    calls ``fuse_feature_maps`` directly.
    """
    if len(fused_branches) != len(fusing_branches):
        raise ValidationError(
            f"branch lists differ in length: {len(fused_branches)} vs {len(fusing_branches)}")
    fused = []
    for balanced, instance in zip(fused_branches, fusing_branches):
        mask = select_channels(balanced.shape[1], p, strategy, rng)
        fused.append(fuse_feature_maps(balanced, instance, mask))
    return fused
