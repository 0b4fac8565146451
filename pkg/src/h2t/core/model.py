import copy
import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from .errors import NumericError, ShapeError, ValidationError
from .tensor import DTYPE, Tensor


class BackboneKind(str, Enum):
    MLP = "mlp"
    TINY_CONV = "tiny_conv"


@dataclass(frozen=True)
class BackboneSpec:
    """Architecture of the representation network.

    ``widths`` lists the hidden widths of an MLP (the last one is the feature
    dimension d; an empty tuple is the identity backbone with d = in_dims) or
    the output channels of each TinyConv layer (the last one is d).
    """
    kind: BackboneKind
    in_dims: int
    widths: Tuple[int, ...] = ()
    input_shape: Optional[Tuple[int, int, int]] = None
    padding: str = "same"
    pool: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", BackboneKind(self.kind))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.in_dims < 1:
            raise ValidationError(f"in_dims must be >= 1, got {self.in_dims}")
        if any(w < 1 for w in self.widths):
            raise ValidationError(f"layer widths must be >= 1, got {self.widths}")
        if self.kind is BackboneKind.TINY_CONV:
            if not self.widths:
                raise ValidationError("TinyConv needs at least one conv layer")
            if self.input_shape is None:
                raise ValidationError("TinyConv needs input_shape (channels, height, width)")
            object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
            if int(np.prod(self.input_shape)) != self.in_dims:
                raise ValidationError(
                    f"input_shape {self.input_shape} does not hold in_dims={self.in_dims} values")
            if self.padding not in ("same", "valid"):
                raise ValidationError(f"padding must be 'same' or 'valid', got {self.padding!r}")
            self.feature_extent  # raises when a layer would collapse the map

    @property
    def feature_dim(self) -> int:
        return self.widths[-1] if self.widths else self.in_dims

    @property
    def feature_extent(self) -> Tuple[int, int]:
        """Spatial extents (w_F, h_F) of the final feature map"""
        if self.kind is BackboneKind.MLP:
            return 1, 1
        _, height, width = self.input_shape
        shrink = 0 if self.padding == "same" else 2
        for layer in range(len(self.widths)):
            height, width = height - shrink, width - shrink
            if self.pool:
                height, width = height // 2, width // 2
            if height < 1 or width < 1:
                raise ValidationError(
                    f"input_shape {self.input_shape} collapses to nothing at conv layer {layer}")
        return height, width

    @property
    def feature_map_shape(self) -> Tuple[int, int, int]:
        return (self.feature_dim, *self.feature_extent)


@dataclass
class Parameter:
    """A trainable tensor with its momentum buffer"""
    tensor: Tensor
    momentum: np.ndarray
    trainable: bool = True

    @property
    def value(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad

    def set_trainable(self, flag: bool):
        self.trainable = flag
        self.tensor.requires_grad = flag
        if not flag:
            self.tensor.grad = None


class ParameterSet:
    """Ordered mapping from parameter name to :class:`Parameter`"""

    def __init__(self):
        self._params: Dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Parameter:
        value = np.asarray(value, dtype=DTYPE)
        param = Parameter(
            tensor=Tensor(value, requires_grad=trainable, name=name),
            momentum=np.zeros_like(value),
            trainable=trainable,
        )
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for param in self._params.values():
            param.tensor.zero_grad()

    def set_trainable(self, flag: bool):
        for param in self._params.values():
            param.set_trainable(flag)

    def digest(self) -> str:
        """SHA-256 over names, shapes and raw value bytes"""
        h = hashlib.sha256()
        for name, param in self._params.items():
            h.update(name.encode("utf-8"))
            h.update(repr(param.value.shape).encode("ascii"))
            h.update(param.value.tobytes())
        return h.hexdigest()


@dataclass
class ModelState:
    """Backbone parameters, classifier parameters and the backbone architecture"""
    spec: BackboneSpec
    num_classes: int
    backbone: ParameterSet = field(default_factory=ParameterSet)
    classifier: ParameterSet = field(default_factory=ParameterSet)

    @classmethod
    def initialize(cls, spec: BackboneSpec, num_classes: int, seed: int,
                   classifier_bias: bool = True) -> "ModelState":
        """Create a model with He-uniform weights and zero biases"""
        if num_classes < 1:
            raise ValidationError(f"num_classes must be >= 1, got {num_classes}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1517]))
        model = cls(spec=spec, num_classes=num_classes)

        if spec.kind is BackboneKind.MLP:
            fan_in = spec.in_dims
            for i, width in enumerate(spec.widths):
                model.backbone.add(f"fc{i}.weight", _he_uniform(rng, (fan_in, width), fan_in))
                model.backbone.add(f"fc{i}.bias", np.zeros(width))
                fan_in = width
        else:
            channels = spec.input_shape[0]
            for i, width in enumerate(spec.widths):
                fan_in = channels * 9
                model.backbone.add(f"conv{i}.weight",
                                   _he_uniform(rng, (width, channels, 3, 3), fan_in))
                model.backbone.add(f"conv{i}.bias", np.zeros(width))
                channels = width

        d = spec.feature_dim
        model.classifier.add("classifier.weight", _he_uniform(rng, (d, num_classes), d))
        if classifier_bias:
            model.classifier.add("classifier.bias", np.zeros(num_classes))
        return model

    def parameters(self) -> List[Tuple[str, Parameter]]:
        return list(self.backbone.items()) + list(self.classifier.items())

    def freeze_backbone(self):
        self.backbone.set_trainable(False)

    def reinit_classifier(self, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1A5]))
        d = self.spec.feature_dim
        weight = self.classifier["classifier.weight"]
        weight.tensor.data = _he_uniform(rng, (d, self.num_classes), d).astype(DTYPE)
        weight.momentum.fill(0.0)
        if "classifier.bias" in self.classifier:
            bias = self.classifier["classifier.bias"]
            bias.tensor.data = np.zeros(self.num_classes, dtype=DTYPE)
            bias.momentum.fill(0.0)

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


def _as_tensor(x: Union[Tensor, np.ndarray]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backbone_forward(model: ModelState, x: Union[Tensor, np.ndarray]) -> Tuple[Tensor, Tensor]:
    """Map inputs (batch, in_dims) to feature maps F (batch, d, w_F, h_F) and
    their global average pool f (batch, d)."""
    x = _as_tensor(x)
    spec = model.spec
    if x.ndim != 2 or x.shape[1] != spec.in_dims:
        raise ShapeError("backbone input", (None, spec.in_dims), x.shape)
    batch = x.shape[0]

    if spec.kind is BackboneKind.MLP:
        h = x
        for i in range(len(spec.widths)):
            weight = model.backbone[f"fc{i}.weight"].tensor
            bias = model.backbone[f"fc{i}.bias"].tensor
            h = (h @ weight + bias).relu()
        feature_maps = h.reshape(batch, spec.feature_dim, 1, 1)
    else:
        h = x.reshape(batch, *spec.input_shape)
        pad = 1 if spec.padding == "same" else 0
        for i in range(len(spec.widths)):
            h = h.conv2d(model.backbone[f"conv{i}.weight"].tensor,
                         model.backbone[f"conv{i}.bias"].tensor, pad).relu()
            if spec.pool:
                h = h.max_pool2x2()
        feature_maps = h

    if not feature_maps.all_finite():
        raise NumericError("non-finite activation in backbone output")
    return feature_maps, feature_maps.spatial_mean()


def classifier_forward(model: ModelState, f: Union[Tensor, np.ndarray]) -> Tensor:
    """Logits z = W^T f (+ bias) for pooled features f (batch, d)"""
    f = _as_tensor(f)
    d = model.spec.feature_dim
    if f.ndim != 2 or f.shape[1] != d:
        raise ShapeError("classifier input", (None, d), f.shape)
    z = f @ model.classifier["classifier.weight"].tensor
    if "classifier.bias" in model.classifier:
        z = z + model.classifier["classifier.bias"].tensor
    return z


def predict_logits(model: ModelState, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Logits for a whole array of inputs without recording a tape"""
    chunks = []
    with Tensor.no_grad():
        for start in range(0, len(x), batch_size):
            _, f = backbone_forward(model, x[start:start + batch_size])
            chunks.append(classifier_forward(model, f).data)
    if not chunks:
        return np.zeros((0, model.num_classes), dtype=DTYPE)
    return np.concatenate(chunks, axis=0)


def pooled_features(model: ModelState, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    chunks = []
    with Tensor.no_grad():
        for start in range(0, len(x), batch_size):
            chunks.append(backbone_forward(model, x[start:start + batch_size])[1].data)
    if not chunks:
        return np.zeros((0, model.spec.feature_dim), dtype=DTYPE)
    return np.concatenate(chunks, axis=0)
