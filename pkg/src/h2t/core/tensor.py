"""Dense float32 tensors with a reverse-mode gradient tape.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. ``backward`` walks the
graph in reverse topological order. Only the operations the two backbones,
the fusion step and the linear classifier need are provided.
"""
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp

from .errors import ShapeError, ValidationError

DTYPE = np.float32

ArrayLike = Union[np.ndarray, Sequence, float]


def _topological_order(root: "Tensor") -> List["Tensor"]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._prev:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


class Tensor:
    """A float32 array plus the bookkeeping needed for backpropagation"""

    _no_grad = False

    class no_grad:
        def __enter__(self):
            self.prev, Tensor._no_grad = Tensor._no_grad, True

        def __exit__(self, *args):
            Tensor._no_grad = self.prev

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = "",
                 _children: Tuple["Tensor", ...] = (), _op: str = ""):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=DTYPE))
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._prev = _children
        self._op = _op
        self._backward: Callable[[], None] = lambda: None

    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False, name: str = "") -> "Tensor":
        return cls(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad, name=name)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self._op or 'leaf'})"

    # graph plumbing

    def _child(self, data: np.ndarray, parents: Tuple["Tensor", ...], op: str) -> "Tensor":
        track = not Tensor._no_grad and any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=track, _children=parents if track else (), _op=op)

    def _accumulate(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        grad = grad.astype(DTYPE, copy=False)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self, grad: Optional[np.ndarray] = None):
        if not self.requires_grad:
            raise ValidationError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("implicit backward seed", (), self.shape)
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=DTYPE))
        for node in reversed(_topological_order(self)):
            node._backward()

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    # operations

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError("matmul left operand", (None, other.shape[0]), self.shape)
        out = self._child(self.data @ other.data, (self, other), "matmul")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad @ other.data.T)
                other._accumulate(self.data.T @ out.grad)
            out._backward = _backward
        return out

    def __add__(self, other: "Tensor") -> "Tensor":
        out = self._child(self.data + other.data, (self, other), "add")
        if out.requires_grad:
            def _backward():
                self._accumulate(_unbroadcast(out.grad, self.shape))
                other._accumulate(_unbroadcast(out.grad, other.shape))
            out._backward = _backward
        return out

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = self._child(np.where(mask, self.data, DTYPE(0)), (self,), "relu")
        if out.requires_grad:
            def _backward():
                # subgradient at 0 is 0
                self._accumulate(out.grad * mask)
            out._backward = _backward
        return out

    def reshape(self, *shape: int) -> "Tensor":
        out = self._child(self.data.reshape(shape), (self,), "reshape")
        if out.requires_grad:
            def _backward():
                self._accumulate(out.grad.reshape(self.shape))
            out._backward = _backward
        return out

    def spatial_mean(self) -> "Tensor":
        """Global average pool of a (batch, d, w, h) map to (batch, d)"""
        if self.ndim != 4:
            raise ShapeError("spatial_mean input rank", (None, None, None, None), self.shape)
        area = self.shape[2] * self.shape[3]
        out = self._child(self.data.mean(axis=(2, 3), dtype=DTYPE), (self,), "spatial_mean")
        if out.requires_grad:
            def _backward():
                grad = np.broadcast_to(out.grad[:, :, None, None] / DTYPE(area), self.shape)
                self._accumulate(np.array(grad))
            out._backward = _backward
        return out

    def conv2d(self, weight: "Tensor", bias: "Tensor", padding: int) -> "Tensor":
        """Stride-1 cross-correlation of (B, C, H, W) with (O, C, k, k) kernels"""
        batch, channels, _, _ = self.shape
        out_channels, in_channels, kh, kw = weight.shape
        if in_channels != channels:
            raise ShapeError("conv2d input channels", (batch, in_channels, None, None), self.shape)
        padded = np.pad(self.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        out_h, out_w = windows.shape[2], windows.shape[3]
        if out_h < 1 or out_w < 1:
            raise ShapeError("conv2d spatial extent", (batch, channels, kh, kw), self.shape)
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, -1)
        kernel = weight.data.reshape(out_channels, -1)
        result = (cols @ kernel.T + bias.data).reshape(batch, out_h, out_w, out_channels)
        out = self._child(result.transpose(0, 3, 1, 2), (self, weight, bias), "conv2d")
        if out.requires_grad:
            def _backward():
                grad = out.grad.transpose(0, 2, 3, 1).reshape(-1, out_channels)
                weight._accumulate((grad.T @ cols).reshape(weight.shape))
                bias._accumulate(grad.sum(axis=0))
                if not self.requires_grad:
                    return
                dcols = (grad @ kernel).reshape(batch, out_h, out_w, channels, kh, kw)
                dpadded = np.zeros(padded.shape, dtype=DTYPE)
                for i in range(kh):
                    for j in range(kw):
                        dpadded[:, :, i:i + out_h, j:j + out_w] += \
                            dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                height, width = self.shape[2], self.shape[3]
                self._accumulate(dpadded[:, :, padding:padding + height, padding:padding + width])
            out._backward = _backward
        return out

    def max_pool2x2(self) -> "Tensor":
        batch, channels, height, width = self.shape
        out_h, out_w = height // 2, width // 2
        if out_h < 1 or out_w < 1:
            raise ShapeError("max_pool2x2 spatial extent", (batch, channels, 2, 2), self.shape)
        cropped = self.data[:, :, :2 * out_h, :2 * out_w]
        blocks = cropped.reshape(batch, channels, out_h, 2, out_w, 2) \
            .transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, out_h, out_w, 4)
        winner = blocks.argmax(axis=-1)[..., None]
        out = self._child(np.take_along_axis(blocks, winner, axis=-1)[..., 0], (self,), "max_pool")
        if out.requires_grad:
            def _backward():
                routed = np.zeros(blocks.shape, dtype=DTYPE)
                np.put_along_axis(routed, winner, out.grad[..., None], axis=-1)
                routed = routed.reshape(batch, channels, out_h, out_w, 2, 2) \
                    .transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, 2 * out_h, 2 * out_w)
                grad = np.zeros(self.shape, dtype=DTYPE)
                grad[:, :, :2 * out_h, :2 * out_w] = routed
                self._accumulate(grad)
            out._backward = _backward
        return out

    def substitute_channels(self, donor: "Tensor", index: np.ndarray) -> "Tensor":
        """Copy of ``self`` whose channels ``index`` (axis 1) come from ``donor``"""
        if self.shape != donor.shape:
            raise ShapeError("substitute_channels donor", self.shape, donor.shape)
        data = self.data.copy()
        data[:, index] = donor.data[:, index]
        out = self._child(data, (self, donor), "substitute_channels")
        if out.requires_grad:
            def _backward():
                kept = out.grad.copy()
                kept[:, index] = 0.0
                taken = np.zeros_like(out.grad)
                taken[:, index] = out.grad[:, index]
                self._accumulate(kept)
                donor._accumulate(taken)
            out._backward = _backward
        return out

    def cross_entropy(self, labels: np.ndarray) -> "Tensor":
        """Mean softmax cross-entropy of (batch, C) logits against integer labels"""
        batch = self.shape[0]
        rows = np.arange(batch)
        lse = logsumexp(self.data, axis=1).astype(DTYPE)
        losses = lse - self.data[rows, labels]
        out = self._child(np.asarray(losses.mean(dtype=DTYPE)), (self,), "cross_entropy")
        if out.requires_grad:
            def _backward():
                probs = np.exp(self.data - lse[:, None])
                probs[rows, labels] -= 1.0
                self._accumulate(probs * (out.grad / DTYPE(batch)))
            out._backward = _backward
        return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad
