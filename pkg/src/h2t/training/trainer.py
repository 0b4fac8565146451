import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import FrozenBackboneError, NumericError, ValidationError
from ..core.fusion import SelectionStrategy, fuse_feature_maps, select_channels
from ..core.model import BackboneSpec, ModelState, backbone_forward, classifier_forward
from ..core.optim import sgd_step, softmax_xent_loss, step_learning_rate
from ..data.longtail import DatasetBundle
from ..data.sampling import (FUSED_STREAM, SamplerKind, SamplerSpec, draw_epoch, iter_paired_batches,
                             stream_rng)
from ..log import get_logger

logger = get_logger(__name__)

STAGE1_STREAM = 0
MASK_STREAM = 3


@dataclass
class TrainSchedule:
    """Epochs, learning rates and seeds of both training stages.

    Milestones are fractions of the stage's epoch count. When ``stage2_lr``
    is unset, stage II runs at 0.1 x the terminal stage-I learning rate.
    """
    stage1_epochs: int = 100
    stage2_epochs: int = 10
    stage1_lr: float = 0.1
    stage2_lr: Optional[float] = None
    momentum: float = 0.9
    batch_size: int = 64
    stage1_milestones: Tuple[float, ...] = (0.8, 0.9)
    stage2_milestones: Tuple[float, ...] = ()
    lr_decay: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0
    reinit_classifier: bool = False
    check_freeze: bool = True

    def __post_init__(self):
        self.stage1_milestones = tuple(float(m) for m in self.stage1_milestones)
        self.stage2_milestones = tuple(float(m) for m in self.stage2_milestones)
        if self.stage1_epochs < 1 or self.stage2_epochs < 1:
            raise ValidationError("both stages need at least one epoch")
        if self.stage1_lr < 0 or (self.stage2_lr is not None and self.stage2_lr < 0):
            raise ValidationError("learning rates must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")

    @staticmethod
    def milestone_epochs(fractions: Sequence[float], epochs: int) -> List[int]:
        return [int(round(f * epochs)) for f in fractions]

    def stage1_lr_at(self, epoch: int) -> float:
        return step_learning_rate(self.stage1_lr, epoch,
                                  self.milestone_epochs(self.stage1_milestones, self.stage1_epochs),
                                  self.lr_decay)

    @property
    def resolved_stage2_lr(self) -> float:
        if self.stage2_lr is not None:
            return self.stage2_lr
        return 0.1 * self.stage1_lr_at(self.stage1_epochs - 1)

    def stage2_lr_at(self, epoch: int) -> float:
        return step_learning_rate(self.resolved_stage2_lr, epoch,
                                  self.milestone_epochs(self.stage2_milestones, self.stage2_epochs),
                                  self.lr_decay)


@dataclass
class RunRecord:
    """Loss curves and provenance of one training stage"""
    stage: str
    epoch_losses: List[float] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    config: Dict = field(default_factory=dict)
    checkpoint_hashes: Dict[str, str] = field(default_factory=dict)
    backbone_digest: str = ""
    classifier_digest: str = ""

    @property
    def steps(self) -> int:
        return len(self.step_losses)

    def to_dict(self) -> Dict:
        return asdict(self)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path


@dataclass
class FreezeReport:
    passed: bool
    first_mismatch: Optional[str] = None

    def __bool__(self):
        return self.passed


def assert_frozen_backbone(before: ModelState, after: ModelState) -> FreezeReport:
    """Pass iff every backbone tensor is bit-identical; classifier changes are ignored"""
    if before.spec != after.spec or list(before.backbone) != list(after.backbone):
        raise ValidationError("models do not share a backbone architecture")
    for name, param in before.backbone.items():
        other = after.backbone[name].value
        if param.value.shape != other.shape or param.value.tobytes() != other.tobytes():
            return FreezeReport(False, name)
    return FreezeReport(True)


def _epoch_len(data: DatasetBundle, batch_size: int) -> int:
    # one nominal pass over the training set
    return max(len(data), batch_size)


def _check_loss(loss: float, stage: str, step: int):
    if not np.isfinite(loss):
        raise NumericError(f"{stage} loss diverged to {loss}", step=step)


def train_stage1(data: DatasetBundle, spec: BackboneSpec, sched: TrainSchedule,
                 model: Optional[ModelState] = None) -> Tuple[ModelState, RunRecord]:
    """Representation learning on instance-wise batches with CE loss"""
    model = model if model is not None else ModelState.initialize(spec, data.num_classes, sched.seed)
    sampler = SamplerSpec(SamplerKind.INSTANCE_WISE, data.counts, sched.seed)
    class_indices = data.class_indices()
    record = RunRecord(stage="stage1", config={
        "schedule": asdict(sched), "init": "he_uniform", "sampler": sampler.kind.value,
    })

    step = 0
    for epoch in range(sched.stage1_epochs):
        lr = sched.stage1_lr_at(epoch)
        batches = draw_epoch(sampler, class_indices, _epoch_len(data, sched.batch_size),
                             sched.batch_size, stream_rng(sched.seed, epoch, STAGE1_STREAM))
        epoch_losses = []
        for idx in batches:
            try:
                _, f = backbone_forward(model, data.features[idx])
            except NumericError as exc:
                raise NumericError(str(exc), step=step) from exc
            loss = softmax_xent_loss(classifier_forward(model, f), data.labels[idx])
            _check_loss(loss, "stage I", step)
            sgd_step(model.parameters(), lr, sched.momentum, sched.weight_decay)
            epoch_losses.append(loss)
            record.step_losses.append(loss)
            step += 1
        record.epoch_losses.append(float(np.mean(epoch_losses)))
        logger.info("Stage I epoch %d/%d  loss %.4f  lr %.4g",
                    epoch + 1, sched.stage1_epochs, record.epoch_losses[-1], lr)

    record.backbone_digest = model.backbone.digest()
    record.classifier_digest = model.classifier.digest()
    return model, record


def _finetune(model: ModelState, data: DatasetBundle, sched: TrainSchedule, stage: str,
              batches_for_epoch: Callable[[int], Sequence[Tuple[np.ndarray, Optional[np.ndarray]]]],
              fuse: Optional[Callable], config: Dict) -> Tuple[ModelState, RunRecord]:
    entry = model
    model = model.copy()
    model.freeze_backbone()
    if sched.reinit_classifier:
        model.reinit_classifier(sched.seed)
    record = RunRecord(stage=stage, config=config)

    step = 0
    for epoch in range(sched.stage2_epochs):
        lr = sched.stage2_lr_at(epoch)
        mask_rng = stream_rng(sched.seed, epoch, MASK_STREAM)
        epoch_losses = []
        for balanced_idx, instance_idx in batches_for_epoch(epoch):
            try:
                maps, pooled = backbone_forward(model, data.features[balanced_idx])
                if fuse is not None:
                    donor, _ = backbone_forward(model, data.features[instance_idx])
                    pooled = fuse(maps, donor, mask_rng).spatial_mean()
            except NumericError as exc:
                raise NumericError(str(exc), step=step) from exc
            # only the fused (balanced) branch labels are used
            loss = softmax_xent_loss(classifier_forward(model, pooled), data.labels[balanced_idx])
            _check_loss(loss, stage, step)
            sgd_step(model.parameters(), lr, sched.momentum, sched.weight_decay)
            if any(p.trainable for p in model.backbone.values()):
                raise FrozenBackboneError(f"backbone became trainable at step {step}")
            epoch_losses.append(loss)
            record.step_losses.append(loss)
            step += 1
        record.epoch_losses.append(float(np.mean(epoch_losses)))
        if sched.check_freeze:
            report = assert_frozen_backbone(entry, model)
            if not report:
                raise FrozenBackboneError(
                    f"backbone parameter {report.first_mismatch} changed during epoch {epoch + 1}")
        logger.info("%s epoch %d/%d  loss %.4f  lr %.4g",
                    stage, epoch + 1, sched.stage2_epochs, record.epoch_losses[-1], lr)

    record.backbone_digest = model.backbone.digest()
    record.classifier_digest = model.classifier.digest()
    return model, record


def finetune_stage2_h2t(model: ModelState, data: DatasetBundle, sched: TrainSchedule, p: float,
                        strategy: Union[SelectionStrategy, str] = SelectionStrategy.RANDOM,
                        fusing_sampler: Union[SamplerKind, str] = SamplerKind.INSTANCE_WISE,
                        fused_sampler: Union[SamplerKind, str] = SamplerKind.CLASS_BALANCED
                        ) -> Tuple[ModelState, RunRecord]:
    """Classifier finetuning on fused feature maps with a frozen backbone.

    Every step pairs a fused-branch batch with a fusing-branch batch, fuses
    their feature maps, pools, classifies and updates the classifier only.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"fusion ratio p must lie in [0, 1], got {p}")
    strategy = SelectionStrategy(strategy)
    fused_spec = SamplerSpec(fused_sampler, data.counts, sched.seed)
    fusing_spec = SamplerSpec(fusing_sampler, data.counts, sched.seed)
    class_indices = data.class_indices()
    d = model.spec.feature_dim

    def batches_for_epoch(epoch: int):
        return iter_paired_batches(fused_spec, fusing_spec, class_indices, epoch,
                                   _epoch_len(data, sched.batch_size), sched.batch_size)

    def fuse(maps, donor, rng):
        return fuse_feature_maps(maps, donor, select_channels(d, p, strategy, rng))

    config = {
        "schedule": asdict(sched), "p": float(p), "strategy": strategy.value,
        "fused_sampler": fused_spec.kind.value, "fusing_sampler": fusing_spec.kind.value,
        "stage2_lr": sched.resolved_stage2_lr,
    }
    return _finetune(model, data, sched, "stage2", batches_for_epoch, fuse, config)


def finetune_stage2_balanced(model: ModelState, data: DatasetBundle,
                             sched: TrainSchedule) -> Tuple[ModelState, RunRecord]:
    """Classifier retraining on class-balanced batches without fusion"""
    fused_spec = SamplerSpec(SamplerKind.CLASS_BALANCED, data.counts, sched.seed)
    class_indices = data.class_indices()

    def batches_for_epoch(epoch: int):
        batches = draw_epoch(fused_spec, class_indices, _epoch_len(data, sched.batch_size),
                             sched.batch_size, stream_rng(sched.seed, epoch, FUSED_STREAM))
        return [(idx, None) for idx in batches]

    config = {"schedule": asdict(sched), "p": 0.0, "fused_sampler": fused_spec.kind.value,
              "stage2_lr": sched.resolved_stage2_lr}
    return _finetune(model, data, sched, "stage2-balanced", batches_for_epoch, None, config)
