from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .model import ModelState, backbone_forward, classifier_forward
from .tensor import DTYPE, Tensor

LossFn = Callable[[ModelState], Tensor]


def default_loss_fn(x: np.ndarray, y: Sequence[int]) -> LossFn:
    labels = np.asarray(y, dtype=np.int64)

    def loss_fn(model: ModelState) -> Tensor:
        _, f = backbone_forward(model, x)
        return classifier_forward(model, f).cross_entropy(labels)

    return loss_fn


def finite_diff_check(model: ModelState, x: Optional[np.ndarray] = None,
                      y: Optional[Sequence[int]] = None, epsilon: float = 1e-3,
                      loss_fn: Optional[LossFn] = None, samples_per_param: int = 8,
                      rng: Optional[np.random.Generator] = None) -> float:
    """Compare tape gradients with central differences.

    Returns the maximum over sampled entries of every trainable parameter of
    |analytic - numeric| / max(1, |numeric|). ``loss_fn`` overrides the plain
    backbone -> pool -> classifier -> CE path, which lets the fused stage-II
    forward be checked as well. The model is left unchanged.
    """
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon}")
    if loss_fn is None:
        if x is None or y is None:
            raise ValidationError("finite_diff_check needs (x, y) or a loss_fn")
        loss_fn = default_loss_fn(x, y)
    rng = rng if rng is not None else np.random.default_rng(0)

    params = [(name, p) for name, p in model.parameters() if p.trainable]
    for _, param in params:
        param.tensor.grad = None
    loss_fn(model).backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
                for name, p in params}
    for _, param in params:
        param.tensor.grad = None

    worst = 0.0
    with Tensor.no_grad():
        for name, param in params:
            flat = param.value.reshape(-1)
            count = min(samples_per_param, flat.size)
            for idx in rng.choice(flat.size, size=count, replace=False):
                original = flat[idx]
                plus, minus = original + DTYPE(epsilon), original - DTYPE(epsilon)
                flat[idx] = plus
                upper = float(loss_fn(model).data)
                flat[idx] = minus
                lower = float(loss_fn(model).data)
                flat[idx] = original
                # divide by the step actually representable in float32
                numeric = (upper - lower) / (float(plus) - float(minus))
                exact = float(analytic[name].reshape(-1)[idx])
                worst = max(worst, abs(exact - numeric) / max(1.0, abs(numeric)))
    return worst
