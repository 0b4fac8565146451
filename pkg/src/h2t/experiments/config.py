import dataclasses
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import tomli_w

from ..core.errors import ConfigError, ValidationError
from ..core.fusion import SelectionStrategy
from ..core.model import BackboneKind, BackboneSpec
from ..data.sampling import SamplerKind
from ..training.trainer import TrainSchedule


@dataclass
class DatasetConfig:
    num_classes: int = 20
    n_max: int = 500
    rho: float = 100.0
    in_dims: int = 16
    separation: float = 4.0
    noise_scale: float = 1.0
    test_per_class: int = 50
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("dataset.num_classes", "must be >= 2")
        if self.n_max < 1:
            raise ConfigError("dataset.n_max", "must be >= 1")
        if not 1 <= self.rho <= self.n_max:
            raise ConfigError("dataset.rho", f"must lie in [1, n_max={self.n_max}]")
        if self.in_dims < 2:
            raise ConfigError("dataset.in_dims", "must be >= 2")
        if self.separation <= 0:
            raise ConfigError("dataset.separation", "must be > 0")
        if self.noise_scale <= 0:
            raise ConfigError("dataset.noise_scale", "must be > 0")
        if self.test_per_class < 1:
            raise ConfigError("dataset.test_per_class", "must be >= 1")


@dataclass
class BackboneConfig:
    kind: str = BackboneKind.MLP.value
    widths: List[int] = field(default_factory=lambda: [64, 32])
    input_shape: Optional[List[int]] = None
    padding: str = "same"
    pool: bool = True

    def to_spec(self, in_dims: int) -> BackboneSpec:
        return BackboneSpec(
            kind=BackboneKind(self.kind),
            in_dims=in_dims,
            widths=tuple(self.widths),
            input_shape=tuple(self.input_shape) if self.input_shape else None,
            padding=self.padding,
            pool=self.pool,
        )


@dataclass
class FusionConfig:
    p: float = 0.3
    strategy: str = SelectionStrategy.RANDOM.value

    def validate(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("fusion.p", "must lie in [0, 1]")
        _check_enum(SelectionStrategy, self.strategy, "fusion.strategy")


@dataclass
class SamplerConfig:
    fused: str = SamplerKind.CLASS_BALANCED.value
    fusing: str = SamplerKind.INSTANCE_WISE.value

    def validate(self):
        _check_enum(SamplerKind, self.fused, "samplers.fused")
        _check_enum(SamplerKind, self.fusing, "samplers.fusing")


@dataclass
class SweepConfig:
    p_values: List[float] = field(default_factory=lambda: [0.0, 0.1, 0.3, 0.5, 0.7, 1.0])
    samplers: List[str] = field(default_factory=lambda: [
        SamplerKind.REVERSE.value, SamplerKind.CLASS_BALANCED.value, SamplerKind.INSTANCE_WISE.value])
    strategies: List[str] = field(default_factory=lambda: [s.value for s in SelectionStrategy])
    rationale_p_values: List[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])

    def validate(self):
        for name in ("p_values", "rationale_p_values"):
            if any(not 0.0 <= p <= 1.0 for p in getattr(self, name)):
                raise ConfigError(f"sweep.{name}", "every value must lie in [0, 1]")
        for kind in self.samplers:
            _check_enum(SamplerKind, kind, "sweep.samplers")
        for strategy in self.strategies:
            _check_enum(SelectionStrategy, strategy, "sweep.strategies")


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; every seed is explicit"""
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    samplers: SamplerConfig = field(default_factory=SamplerConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: str = "runs/default"
    threshold_scale: float = 1.0
    head_threshold: float = 100.0
    tail_threshold: float = 20.0
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])

    @property
    def split_thresholds(self):
        return self.head_threshold * self.threshold_scale, self.tail_threshold * self.threshold_scale

    def backbone_spec(self) -> BackboneSpec:
        return self.backbone.to_spec(self.dataset.in_dims)

    def validate(self) -> "ExperimentConfig":
        self.dataset.validate()
        self.fusion.validate()
        self.samplers.validate()
        self.sweep.validate()
        _check_enum(BackboneKind, self.backbone.kind, "backbone.kind")
        try:
            self.backbone_spec()
        except ValidationError as exc:
            raise ConfigError("backbone", str(exc)) from exc
        if self.threshold_scale <= 0:
            raise ConfigError("threshold_scale", "must be > 0")
        if not 0 <= self.tail_threshold < self.head_threshold:
            raise ConfigError("head_threshold", "need head_threshold > tail_threshold >= 0")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return _drop_none(dataclasses.asdict(self))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = {
    "dataset": DatasetConfig,
    "backbone": BackboneConfig,
    "schedule": TrainSchedule,
    "fusion": FusionConfig,
    "samplers": SamplerConfig,
    "sweep": SweepConfig,
}


def _check_enum(enum_cls, value, field_name: str):
    try:
        enum_cls(value)
    except ValueError:
        choices = ", ".join(member.value for member in enum_cls)
        raise ConfigError(field_name, f"{value!r} is not one of {choices}") from None


def _drop_none(value):
    if isinstance(value, dict):
        return {k: _drop_none(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_drop_none(v) for v in value]
    return value


def _build_section(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix, "must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}", "unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from exc


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    kwargs = dict(data)
    for name, cls in _SECTIONS.items():
        if name in kwargs:
            kwargs[name] = _build_section(cls, kwargs[name], name)
    try:
        config = ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("<root>", str(exc)) from exc
    return config.validate()


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from exc
    return config_from_dict(data)


def dump_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        tomli_w.dump(config.to_dict(), f)
    return path
