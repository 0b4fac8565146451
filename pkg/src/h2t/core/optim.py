from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from .errors import NumericError, ValidationError
from .model import Parameter, ParameterSet
from .tensor import DTYPE, Tensor


def softmax_xent_loss(z: Tensor, y: Sequence[int], backward: bool = True) -> float:
    """Mean cross-entropy of logits ``z`` against labels ``y``.

    When ``backward`` is true and ``z`` is on a tape, gradients are
    accumulated into every trainable parameter that produced it.
    """
    labels = np.asarray(y, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ValidationError(f"expected {z.shape[0]} labels for logits of shape {z.shape}")
    num_classes = z.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes - 1}]")
    loss = z.cross_entropy(labels)
    if backward and loss.requires_grad:
        loss.backward()
    return float(loss.data)


def step_learning_rate(base_lr: float, epoch: int, milestones: Sequence[int],
                       factor: float) -> float:
    """Learning rate after multiplying by ``factor`` at every milestone passed"""
    passed = sum(1 for m in milestones if epoch >= m)
    return base_lr * factor ** passed


ParamSource = Union[ParameterSet, Iterable[Tuple[str, Parameter]]]


def sgd_step(params: ParamSource, lr: float, momentum: float, weight_decay: float = 0.0):
    """One SGD-with-momentum update, then zero the gradients.

    buf <- momentum * buf + grad; value <- value - lr * buf. Frozen parameters
    are left bit-unchanged and parameters without a gradient are skipped;
    every gradient, frozen ones included, is zeroed afterwards.
    """
    if lr < 0:
        raise ValidationError(f"learning rate must be >= 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValidationError(f"momentum must lie in [0, 1), got {momentum}")
    items = list(params.items() if isinstance(params, ParameterSet) else params)
    lr32, mu32, wd32 = DTYPE(lr), DTYPE(momentum), DTYPE(weight_decay)

    for name, param in items:
        grad = param.grad
        if not param.trainable or grad is None:
            continue
        if weight_decay:
            grad = grad + wd32 * param.value
        param.momentum *= mu32
        param.momentum += grad
        param.tensor.data = param.value - lr32 * param.momentum
        if not np.isfinite(param.tensor.data).all():
            raise NumericError(f"parameter {name} became non-finite")
    for _, param in items:
        param.tensor.zero_grad()
