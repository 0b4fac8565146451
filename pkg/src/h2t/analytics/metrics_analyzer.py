import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from ..core.metrics import MetricsReport
from ..data.longtail import SplitPartition, SplitTag
from .diagnostics import BoundaryGrid

SPLIT_COLUMNS = {SplitTag.HEAD: 'head', SplitTag.MEDIUM: 'med', SplitTag.TAIL: 'tail'}


class MetricsAnalyzer:
    """Writes evaluation results as CSV and JSON tables"""

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _write_json(self, name: str, payload) -> Path:
        path = self.output_dir / name
        with open(path, 'w') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        return path

    def _write_csv(self, name: str, df: pd.DataFrame) -> Path:
        path = self.output_dir / name
        df.to_csv(path, index=False, encoding='utf-8')
        return path

    def save_metrics(self, report: MetricsReport, stem: str = 'metrics') -> List[Path]:
        """Save a report as JSON plus a per-class CSV"""
        support = report.confusion.sum(axis=1)
        df = pd.DataFrame({
            'class': np.arange(len(support)),
            'split': [tag.value for tag in report.partition.assignment],
            'support': support,
            'correct': np.diag(report.confusion),
            'accuracy': report.per_class,
        })
        return [
            self._write_json(f'{stem}.json', report.to_dict()),
            self._write_csv(f'{stem}.csv', df),
        ]

    def save_summary(self, report: MetricsReport, records: Iterable, name: str = 'metrics_summary.json') -> Path:
        """Generate summary statistics of a finished run"""
        return self._write_json(name, self._generate_summary_stats(report, list(records)))

    def _generate_summary_stats(self, report: MetricsReport, records: List) -> Dict:
        return {
            'accuracy': {
                'all': report.overall,
                **{SPLIT_COLUMNS[tag]: value for tag, value in report.split.items()},
            },
            'split_sizes': {
                SPLIT_COLUMNS[tag]: int(len(report.partition.members(tag))) for tag in SplitTag
            },
            'final_loss': {record.stage: record.epoch_losses[-1] for record in records if record.epoch_losses},
            'steps': {record.stage: record.steps for record in records},
        }

    def save_histogram(self, histogram: np.ndarray, partition: SplitPartition,
                       name: str = 'prediction_histogram.csv') -> Path:
        df = pd.DataFrame({
            'label': np.arange(len(histogram)),
            'split': [tag.value for tag in partition.assignment],
            'frequency': histogram,
        })
        return self._write_csv(name, df)

    def save_grid(self, grid: BoundaryGrid, name: str = 'boundary.csv') -> Path:
        return self._write_csv(name, grid.to_frame())

    def save_json(self, payload: Dict, name: str) -> Path:
        return self._write_json(name, payload)

    def save_table(self, rows: List[Dict], name: str, columns: Optional[List[str]] = None) -> Path:
        return self._write_csv(name, pd.DataFrame(rows, columns=columns))
