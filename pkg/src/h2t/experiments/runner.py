"""Experiment commands: single runs, stage-II sweeps, ablations and diagnostics.

Every command writes into its own output directory and finishes by writing a
MANIFEST of ``<sha256>  <relative path>`` lines covering every file below it.
Sweeps train stage I once and vary only stage II; their points can run in
worker processes, each owning a subdirectory, and are aggregated in task order.
"""
import dataclasses
import shutil
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..analytics.diagnostics import boundary_grid, dump_embeddings, evaluate, prediction_histogram, split_mass
from ..analytics.metrics_analyzer import MetricsAnalyzer
from ..analytics.plot_generator import PlotGenerator
from ..analytics.rationale import class_mean_features, force_proxies
from ..core.checkpoint import file_sha256, load_checkpoint, save_checkpoint
from ..core.errors import ArtifactError, FrozenBackboneError, ValidationError
from ..core.fusion import SelectionStrategy, select_channels
from ..core.metrics import MetricsReport
from ..core.model import ModelState
from ..data.longtail import (DatasetBundle, SplitPartition, SplitTag, load_dataset, longtail_counts,
                             partition_splits, save_dataset, synth_gaussian_longtail)
from ..data.sampling import SamplerKind
from ..log import get_logger
from ..training.trainer import (RunRecord, assert_frozen_backbone, finetune_stage2_h2t, train_stage1)
from .config import ExperimentConfig, SamplerConfig, config_from_dict, dump_config, load_config

logger = get_logger(__name__)

MANIFEST = "MANIFEST"
CONFIG_FILE = "config.toml"
DATASET_FILE = "dataset.h2t"
STAGE1_CKPT = "stage1.ckpt"
STAGE2_CKPT = "stage2.ckpt"
DIAGNOSTICS_DIR = "diagnostics"

SWEEP_COLUMNS = ['seed', 'head', 'med', 'tail', 'all']
RATIONALE_COLUMNS = ['p', 'k', 'head_class', 'tail_class',
                     'fused_head', 'fused_tail', 'fused_gap',
                     'retained_tail', 'retained_head', 'retained_gap',
                     'fused_angle_head', 'fused_angle_tail',
                     'retained_angle_tail', 'retained_angle_head']

ConfigLike = Union[ExperimentConfig, str, Path]


def resolve_config(config: ConfigLike) -> ExperimentConfig:
    if isinstance(config, ExperimentConfig):
        return config.validate()
    return load_config(config)


def write_manifest(directory: Union[str, Path], name: str = MANIFEST) -> Path:
    """Hash every file below ``directory``, sorted by relative path"""
    directory = Path(directory)
    lines = []
    for path in sorted(directory.rglob('*'), key=lambda p: p.relative_to(directory).as_posix()):
        if path.is_file() and path.name != name:
            lines.append(f"{file_sha256(path)}  {path.relative_to(directory).as_posix()}")
    manifest = directory / name
    manifest.write_text("\n".join(lines) + "\n", encoding='utf-8')
    return manifest


def read_manifest(path: Union[str, Path]) -> Dict[str, str]:
    entries = {}
    for line in Path(path).read_text(encoding='utf-8').splitlines():
        if line.strip():
            digest, rel = line.split("  ", 1)
            entries[rel] = digest
    return entries


def _require(run_dir: Path, name: str) -> Path:
    path = run_dir / name
    if not path.exists():
        raise ArtifactError(f"{run_dir}: missing {name}")
    return path


def build_dataset(config: ExperimentConfig) -> DatasetBundle:
    ds = config.dataset
    counts = longtail_counts(ds.n_max, ds.rho, ds.num_classes)
    return synth_gaussian_longtail(counts, ds.in_dims, ds.separation, ds.seed,
                                   test_per_class=ds.test_per_class, noise_scale=ds.noise_scale)


def build_partition(config: ExperimentConfig, data: DatasetBundle) -> SplitPartition:
    head, tail = config.split_thresholds
    return partition_splits(data.counts, head, tail)


def load_model(config: ExperimentConfig, num_classes: int, path: Path) -> ModelState:
    model = ModelState.initialize(config.backbone_spec(), num_classes, config.schedule.seed)
    return load_checkpoint(path, model)


def _prepare_run_dir(config: ExperimentConfig, out_dir: Path) -> DatasetBundle:
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_dir / CONFIG_FILE)
    data = build_dataset(config)
    save_dataset(out_dir / DATASET_FILE, data)
    return data


def _run_stage1(config: ExperimentConfig, data: DatasetBundle, out_dir: Path,
                stage1_from: Optional[Path] = None) -> Tuple[ModelState, Optional[RunRecord]]:
    ckpt = out_dir / STAGE1_CKPT
    if stage1_from is not None:
        stage1_from = Path(stage1_from)
        if not stage1_from.exists():
            raise ArtifactError(f"stage-I checkpoint {stage1_from} not found")
        model = load_model(config, data.num_classes, stage1_from)
        if stage1_from.resolve() != ckpt.resolve():
            shutil.copyfile(stage1_from, ckpt)
        logger.info("Resuming from stage-I checkpoint %s", stage1_from.name)
        return model, None

    model, record = train_stage1(data, config.backbone_spec(), config.schedule)
    save_checkpoint(ckpt, model)
    record.checkpoint_hashes = {STAGE1_CKPT: file_sha256(ckpt)}
    record.save(out_dir / "stage1_record.json")
    return model, record


def _run_stage2(config: ExperimentConfig, data: DatasetBundle, stage1: ModelState,
                out_dir: Path) -> Tuple[ModelState, RunRecord]:
    model, record = finetune_stage2_h2t(
        stage1, data, config.schedule, config.fusion.p,
        strategy=config.fusion.strategy,
        fusing_sampler=config.samplers.fusing,
        fused_sampler=config.samplers.fused,
    )
    report = assert_frozen_backbone(stage1, model)
    if not report:
        raise FrozenBackboneError(f"backbone parameter {report.first_mismatch} differs from stage I")
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / STAGE2_CKPT
    save_checkpoint(ckpt, model)
    record.checkpoint_hashes = {STAGE2_CKPT: file_sha256(ckpt)}
    record.save(out_dir / "stage2_record.json")
    return model, record


def cmd_train(config: ConfigLike, out_dir: Optional[Union[str, Path]] = None,
              stage2_only_from: Optional[Union[str, Path]] = None) -> Path:
    """Stage I then stage II, checkpoints, records, metrics and MANIFEST"""
    config = resolve_config(config)
    run_dir = Path(out_dir or config.output_dir)
    data = _prepare_run_dir(config, run_dir)
    partition = build_partition(config, data)

    stage1, record1 = _run_stage1(config, data, run_dir, stage2_only_from)
    stage2, record2 = _run_stage2(config, data, stage1, run_dir)
    record2.checkpoint_hashes[STAGE1_CKPT] = file_sha256(run_dir / STAGE1_CKPT)
    record2.save(run_dir / "stage2_record.json")

    report = evaluate(stage2, data.test, partition)
    analyzer = MetricsAnalyzer(run_dir)
    analyzer.save_metrics(report)
    analyzer.save_summary(report, [r for r in (record1, record2) if r is not None])
    write_manifest(run_dir)
    logger.info("Run finished: all %.4f  head %s  med %s  tail %s",
                report.overall, report.head, report.medium, report.tail)
    return run_dir


def cmd_gen_data(config: ConfigLike, out_dir: Optional[Union[str, Path]] = None) -> Path:
    """Materialize the configured dataset without training"""
    config = resolve_config(config)
    run_dir = Path(out_dir or config.output_dir)
    data = _prepare_run_dir(config, run_dir)
    logger.info("Wrote %d training samples over %d classes (rho=%g)",
                len(data), data.num_classes, data.counts.imbalance_ratio)
    write_manifest(run_dir)
    return run_dir / DATASET_FILE


@dataclass
class SweepPoint:
    value: Any
    seed: int
    report: MetricsReport


@dataclass
class SweepResult:
    """One MetricsReport per (axis value, seed), aggregated by median"""
    axis: str
    points: List[SweepPoint]

    @property
    def values(self) -> List[Any]:
        seen = []
        for point in self.points:
            if point.value not in seen:
                seen.append(point.value)
        return seen

    def seeds(self, value) -> List[int]:
        return [p.seed for p in self.points if p.value == value]

    def reports(self, value) -> List[MetricsReport]:
        return [p.report for p in self.points if p.value == value]

    def to_frame(self) -> pd.DataFrame:
        """Seed rows of every axis value followed by its median row"""
        rows = []
        for value in self.values:
            block = [{
                self.axis: value, 'seed': point.seed,
                'head': _nan(point.report.head), 'med': _nan(point.report.medium),
                'tail': _nan(point.report.tail), 'all': point.report.overall,
            } for point in self.points if point.value == value]
            rows.extend(block)
            medians = pd.DataFrame(block)[['head', 'med', 'tail', 'all']].median()
            rows.append({self.axis: value, 'seed': 'median', **medians.to_dict()})
        return pd.DataFrame(rows, columns=[self.axis] + SWEEP_COLUMNS)

    def medians(self) -> pd.DataFrame:
        df = self.to_frame()
        return df[df['seed'] == 'median'].reset_index(drop=True)


def _nan(value: Optional[float]) -> float:
    return float('nan') if value is None else value


@dataclass(frozen=True)
class PointTask:
    """Everything a worker needs to run one stage-II point"""
    config: Dict
    run_dir: str
    point_dir: str
    value: Any
    seed: int


def run_point(task: PointTask) -> SweepPoint:
    config = config_from_dict(task.config)
    run_dir, point_dir = Path(task.run_dir), Path(task.point_dir)
    data = load_dataset(run_dir / DATASET_FILE)
    stage1 = load_model(config, data.num_classes, run_dir / STAGE1_CKPT)
    logger.info("Sweep point %s seed %d", task.value, task.seed)
    model, _ = _run_stage2(config, data, stage1, point_dir)
    report = evaluate(model, data.test, build_partition(config, data))
    MetricsAnalyzer(point_dir).save_metrics(report)
    return SweepPoint(task.value, task.seed, report)


def _map_points(tasks: Sequence[PointTask], jobs: int) -> List[SweepPoint]:
    if jobs < 1:
        raise ValidationError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(tasks) <= 1:
        return [run_point(task) for task in tasks]
    with Pool(min(jobs, len(tasks))) as pool:
        return pool.map(run_point, tasks)


def _format_value(value: Any) -> str:
    return f"{value:g}" if isinstance(value, float) else str(value)


def _run_sweep(config: ExperimentConfig, out_dir: Optional[Union[str, Path]], axis: str,
               points: Sequence[Tuple[Any, int, ExperimentConfig]], jobs: int,
               stage1_from: Optional[Union[str, Path]] = None) -> Tuple[SweepResult, Path]:
    run_dir = Path(out_dir or config.output_dir)
    data = _prepare_run_dir(config, run_dir)
    _run_stage1(config, data, run_dir, stage1_from)

    tasks = [
        PointTask(
            config=point_config.to_dict(),
            run_dir=str(run_dir),
            point_dir=str(run_dir / "points" / f"{axis}={_format_value(value)}" / f"seed={seed}"),
            value=value,
            seed=seed,
        )
        for value, seed, point_config in points
    ]
    logger.info("Sweeping %s over %d stage-II runs with %d job(s)", axis, len(tasks), jobs)
    result = SweepResult(axis, _map_points(tasks, jobs))
    MetricsAnalyzer(run_dir).save_table(result.to_frame().to_dict('records'), f"sweep_{axis}.csv",
                                        [axis] + SWEEP_COLUMNS)
    return result, run_dir


def _with_point(config: ExperimentConfig, seed: int, **sections) -> ExperimentConfig:
    schedule = dataclasses.replace(config.schedule, seed=seed)
    return config.replace(schedule=schedule, **sections)


def cmd_sweep_p(config: ConfigLike, p_values: Optional[Sequence[float]] = None,
                seeds: Optional[Sequence[int]] = None, out_dir: Optional[Union[str, Path]] = None,
                jobs: int = 1, stage1_from: Optional[Union[str, Path]] = None) -> SweepResult:
    """Stage-II accuracy per split as a function of the fusion ratio"""
    config = resolve_config(config)
    p_values = [float(p) for p in (p_values if p_values is not None else config.sweep.p_values)]
    seeds = list(seeds if seeds is not None else config.seeds)
    if any(not 0.0 <= p <= 1.0 for p in p_values):
        raise ValidationError(f"p values must lie in [0, 1], got {p_values}")

    points = [(p, seed, _with_point(config, seed, fusion=dataclasses.replace(config.fusion, p=p)))
              for p in p_values for seed in seeds]
    result, run_dir = _run_sweep(config, out_dir, 'p', points, jobs, stage1_from)
    PlotGenerator(run_dir).plot_sweep(result.to_frame(), 'p', 'sweep_p.svg')
    write_manifest(run_dir)
    return result


def cmd_ablate_sampler(config: ConfigLike, kinds: Optional[Sequence[str]] = None,
                       seeds: Optional[Sequence[int]] = None, out_dir: Optional[Union[str, Path]] = None,
                       jobs: int = 1) -> SweepResult:
    """Class-balanced fused branch against every fusing-branch sampler"""
    config = resolve_config(config)
    kinds = [SamplerKind(k) for k in (kinds if kinds is not None else config.sweep.samplers)]
    seeds = list(seeds if seeds is not None else config.seeds)
    fused = SamplerKind.CLASS_BALANCED

    points = [(f"{fused.short}+{kind.short}", seed,
               _with_point(config, seed, samplers=SamplerConfig(fused=fused.value, fusing=kind.value)))
              for kind in kinds for seed in seeds]
    result, run_dir = _run_sweep(config, out_dir, 'sampler', points, jobs)
    write_manifest(run_dir)
    return result


def cmd_ablate_selection(config: ConfigLike, strategies: Optional[Sequence[str]] = None,
                         seeds: Optional[Sequence[int]] = None, out_dir: Optional[Union[str, Path]] = None,
                         jobs: int = 1) -> SweepResult:
    """Channel selection strategies at a fixed fusion ratio.

    Deterministic strategies run once, with the first seed; Random runs once
    per seed.
    """
    config = resolve_config(config)
    strategies = [SelectionStrategy(s) for s in (strategies if strategies is not None
                                                 else config.sweep.strategies)]
    seeds = list(seeds if seeds is not None else config.seeds)

    points = []
    for strategy in strategies:
        strategy_seeds = seeds if strategy is SelectionStrategy.RANDOM else seeds[:1]
        for seed in strategy_seeds:
            fusion = dataclasses.replace(config.fusion, strategy=strategy.value)
            points.append((strategy.value, seed, _with_point(config, seed, fusion=fusion)))
    result, run_dir = _run_sweep(config, out_dir, 'strategy', points, jobs)
    write_manifest(run_dir)
    return result


def rationale_table(model: ModelState, data: DatasetBundle, partition: SplitPartition,
                    p_values: Sequence[float]) -> List[Dict]:
    """Force proxies for every (head, tail) class pair and fusion ratio, with First masks"""
    means = class_mean_features(model, data)
    weight = model.classifier["classifier.weight"].value.astype(np.float64)
    d = model.spec.feature_dim
    rows = []
    for p in p_values:
        mask = select_channels(d, p, SelectionStrategy.FIRST)
        for head in partition.members(SplitTag.HEAD):
            for tail in partition.members(SplitTag.TAIL):
                proxies = force_proxies(weight[:, head], weight[:, tail], means[head], means[tail], mask)
                rows.append({'p': float(p), 'k': mask.k, 'head_class': int(head),
                             'tail_class': int(tail), **proxies.to_dict()})
    return rows


def cmd_diagnose(run_dir: Union[str, Path], resolution: int = 200) -> Path:
    """Histograms, boundary grid, rationale table and embeddings of a finished run"""
    run_dir = Path(run_dir)
    config = load_config(_require(run_dir, CONFIG_FILE))
    data = load_dataset(_require(run_dir, DATASET_FILE))
    if data.test is None:
        raise ArtifactError(f"{run_dir / DATASET_FILE}: dataset has no test split")
    models = {
        'stage1': load_model(config, data.num_classes, _require(run_dir, STAGE1_CKPT)),
        'stage2': load_model(config, data.num_classes, _require(run_dir, STAGE2_CKPT)),
    }
    partition = build_partition(config, data)
    diag_dir = run_dir / DIAGNOSTICS_DIR
    analyzer = MetricsAnalyzer(diag_dir)
    plots = PlotGenerator(diag_dir)
    summary: Dict[str, Any] = {'split_mass': {}}

    if len(partition.members(SplitTag.TAIL)) == 0:
        logger.warning("No tail classes under the configured thresholds; histograms skipped")
        summary['histogram'] = 'skipped: no tail classes'
    else:
        for stage, model in models.items():
            hist = prediction_histogram(model, data.test, partition)
            analyzer.save_histogram(hist, partition, f'prediction_histogram_{stage}.csv')
            plots.plot_histogram(hist, partition, f'prediction_histogram_{stage}.svg')
            summary['split_mass'][stage] = {tag.value: mass for tag, mass in split_mass(hist, partition).items()}

    if data.in_dims == 2:
        lo = data.features.min(axis=0) - 1.0
        hi = data.features.max(axis=0) + 1.0
        grid = boundary_grid(models['stage2'], ((float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))),
                             resolution)
        analyzer.save_grid(grid)
        plots.plot_boundary(grid, data.test.features, data.test.labels)
        summary['boundary'] = 'boundary.svg'
    else:
        logger.warning("Boundary grid skipped: inputs are %d-D, the grid needs 2-D inputs", data.in_dims)
        summary['boundary'] = f'skipped: inputs are {data.in_dims}-D'

    rows = rationale_table(models['stage2'], data, partition, config.sweep.rationale_p_values)
    analyzer.save_table(rows, 'rationale.csv', RATIONALE_COLUMNS)
    dump_embeddings(diag_dir / 'embeddings.h2t', models['stage2'], data.test)
    summary['rationale_rows'] = len(rows)
    analyzer.save_json(summary, 'diagnostics.json')
    write_manifest(diag_dir)
    write_manifest(run_dir)
    return diag_dir
