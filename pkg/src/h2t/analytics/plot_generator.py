from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.colors import ListedColormap

from ..data.longtail import SplitPartition, SplitTag
from .diagnostics import BoundaryGrid

PALETTE = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd',
           '#8c564b', '#e377c2', '#7f7f7f', '#bcbd22', '#17becf']

# identical inputs must give byte-identical SVG files
plt.rcParams['svg.hashsalt'] = 'h2t'
SVG_METADATA = {'Date': None}


class PlotGenerator:
    """Generates SVG figures for boundaries, histograms and sweeps"""

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _save(self, name: str) -> Path:
        path = self.output_dir / name
        plt.savefig(path, format='svg', metadata=SVG_METADATA)
        plt.close()
        return path

    def plot_boundary(self, grid: BoundaryGrid, points: Optional[np.ndarray] = None,
                      labels: Optional[np.ndarray] = None, name: str = 'boundary.svg') -> Path:
        """Grid coloring by predicted label with an optional sample scatter"""
        cmap = ListedColormap(PALETTE)
        plt.figure(figsize=(8, 8))
        plt.pcolormesh(grid.xs, grid.ys, grid.labels % len(PALETTE), cmap=cmap,
                       vmin=0, vmax=len(PALETTE) - 1, alpha=0.35, shading='nearest')
        if points is not None and labels is not None:
            plt.scatter(points[:, 0], points[:, 1], c=np.asarray(labels) % len(PALETTE), cmap=cmap,
                        vmin=0, vmax=len(PALETTE) - 1, s=6, edgecolors='none')
        plt.xlim(grid.xs[0], grid.xs[-1])
        plt.ylim(grid.ys[0], grid.ys[-1])
        plt.xlabel('x')
        plt.ylabel('y')
        plt.title('Decision Boundaries')
        return self._save(name)

    def plot_histogram(self, histogram: np.ndarray, partition: SplitPartition,
                       name: str = 'prediction_histogram.svg') -> Path:
        """Predicted-label frequencies of tail-class samples, colored by split"""
        split_colors = {SplitTag.HEAD: PALETTE[0], SplitTag.MEDIUM: PALETTE[1], SplitTag.TAIL: PALETTE[3]}
        plt.figure(figsize=(12, 6))
        plt.bar(np.arange(len(histogram)), histogram,
                color=[split_colors[tag] for tag in partition.assignment])
        plt.xlabel('Predicted label')
        plt.ylabel('Frequency')
        plt.title('Predicted Labels of Tail-Class Samples')
        plt.grid(True, axis='y')
        return self._save(name)

    def plot_sweep(self, df: pd.DataFrame, axis: str, name: str) -> Path:
        """Median split accuracies against the sweep axis"""
        medians = df[df['seed'] == 'median']
        plt.figure(figsize=(12, 8))
        for column, label in (('head', 'Head'), ('med', 'Medium'), ('tail', 'Tail'), ('all', 'All')):
            plt.plot(medians[axis].astype(str), medians[column], marker='o', label=label)
        plt.xlabel(axis)
        plt.ylabel('Median accuracy')
        plt.title(f'Accuracy on Different Splits w.r.t. {axis}')
        plt.legend()
        plt.grid(True)
        return self._save(name)
