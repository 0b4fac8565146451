#!/usr/bin/env python3
import dataclasses
import functools
import sys
from pathlib import Path

import click
import pandas as pd
from rich.console import Console
from rich.table import Table

from .core.errors import (ArtifactError, ConfigError, FormatError, FrozenBackboneError, NumericError,
                          ValidationError)
from .experiments.config import ExperimentConfig, load_config
from .experiments.runner import (cmd_ablate_sampler, cmd_ablate_selection, cmd_diagnose, cmd_gen_data,
                                 cmd_sweep_p, cmd_train)
from .log import configure_logging

console = Console()

EXIT_FORMAT = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _parse_list(value, cast):
    if value is None:
        return None
    return [cast(item) for item in value.split(',') if item.strip()]


COMMON_OPTIONS = [
    click.option('--config', 'config_path', type=click.Path(dir_okay=False), default='configs/default.toml',
                 show_default=True, help='Experiment config (TOML)'),
    click.option('--seed', type=click.IntRange(min=0), default=None,
                 help='Override the training seed (schedule.seed)'),
    click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
                 help='Output directory (defaults to output_dir in the config)'),
]

jobs_option = click.option('--jobs', type=click.IntRange(min=1), default=1, show_default=True,
                           help='Worker processes for sweep points')


def common_options(f):
    for option in reversed(COMMON_OPTIONS):
        f = option(f)
    return f


def _load(config_path: str, seed) -> ExperimentConfig:
    config = load_config(config_path)
    if seed is not None:
        config = config.replace(schedule=dataclasses.replace(config.schedule, seed=seed))
    return config.validate()


def handle_errors(f):
    """Map package errors to a one-line message and the documented exit code"""
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (ConfigError, ValidationError) as e:
            console.print(f"[bold red]Config error: {e}[/bold red]")
            sys.exit(EXIT_CONFIG)
        except (NumericError, FrozenBackboneError) as e:
            console.print(f"[bold red]Run aborted: {e}[/bold red]")
            sys.exit(EXIT_NUMERIC)
        except (FormatError, ArtifactError) as e:
            console.print(f"[bold red]Error: {e}[/bold red]")
            sys.exit(EXIT_FORMAT)
    return wrapper


def _print_sweep(df: pd.DataFrame, title: str):
    table = Table(title=title)
    for column in df.columns:
        table.add_column(str(column), justify='right')
    for row in df.itertuples(index=False):
        cells = [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row]
        style = 'bold' if row.seed == 'median' else None
        table.add_row(*cells, style=style)
    console.print(table)


@click.group()
@click.option('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR (overrides H2T_LOG)')
def cli(log_level):
    """Head-to-tail feature fusion laboratory for long-tailed classification"""
    configure_logging(log_level)


@cli.command()
@common_options
@click.option('--stage2-only', is_flag=True, help='Skip stage I and finetune from --from')
@click.option('--from', 'from_ckpt', type=click.Path(dir_okay=False), default=None,
              help='Stage-I checkpoint to resume from')
@handle_errors
def train(config_path, seed, out_dir, stage2_only, from_ckpt):
    """Run stage I and stage II and write a run directory"""
    if stage2_only and from_ckpt is None:
        raise click.UsageError('--stage2-only needs --from <checkpoint>')
    config = _load(config_path, seed)
    console.print("[bold blue]Training[/bold blue]")
    run_dir = cmd_train(config, out_dir, from_ckpt if stage2_only else None)
    console.print(f"[green]Run written to {run_dir}[/green]")


@cli.command('sweep-p')
@common_options
@jobs_option
@click.option('--p-values', default=None, help='Comma-separated fusion ratios (defaults to sweep.p_values)')
@click.option('--seeds', default=None, help='Comma-separated stage-II seeds (defaults to seeds)')
@handle_errors
def sweep_p(config_path, seed, out_dir, jobs, p_values, seeds):
    """Sweep the fusion ratio p over a shared stage-I checkpoint"""
    config = _load(config_path, seed)
    result = cmd_sweep_p(config, _parse_list(p_values, float), _parse_list(seeds, int), out_dir, jobs)
    _print_sweep(result.to_frame(), 'Accuracy by fusion ratio')


@cli.command('ablate-sampler')
@common_options
@jobs_option
@click.option('--kinds', default=None, help='Comma-separated fusing-branch samplers')
@click.option('--seeds', default=None, help='Comma-separated stage-II seeds')
@handle_errors
def ablate_sampler(config_path, seed, out_dir, jobs, kinds, seeds):
    """Compare fusing-branch samplers with a class-balanced fused branch"""
    config = _load(config_path, seed)
    result = cmd_ablate_sampler(config, _parse_list(kinds, str.strip), _parse_list(seeds, int), out_dir, jobs)
    _print_sweep(result.to_frame(), 'Accuracy by sampler pair')


@cli.command('ablate-selection')
@common_options
@jobs_option
@click.option('--strategies', default=None, help='Comma-separated selection strategies')
@click.option('--seeds', default=None, help='Comma-separated seeds for Random selection')
@handle_errors
def ablate_selection(config_path, seed, out_dir, jobs, strategies, seeds):
    """Compare channel selection strategies at the configured p"""
    config = _load(config_path, seed)
    result = cmd_ablate_selection(config, _parse_list(strategies, str.strip), _parse_list(seeds, int),
                                  out_dir, jobs)
    _print_sweep(result.to_frame(), f'Accuracy by selection strategy (p={config.fusion.p:g})')


@cli.command()
@click.argument('run_dir', type=click.Path(file_okay=False))
@click.option('--resolution', type=click.IntRange(min=1), default=200, show_default=True,
              help='Boundary grid resolution (2-D runs only)')
@handle_errors
def diagnose(run_dir, resolution):
    """Histograms, boundaries, rationale table and embeddings of a finished run"""
    if not Path(run_dir).is_dir():
        raise ArtifactError(f"run directory {run_dir} does not exist")
    diag_dir = cmd_diagnose(run_dir, resolution)
    console.print(f"[green]Diagnostics written to {diag_dir}[/green]")


@cli.command('gen-data')
@common_options
@handle_errors
def gen_data(config_path, seed, out_dir):
    """Generate the configured long-tailed dataset"""
    config = _load(config_path, seed)
    path = cmd_gen_data(config, out_dir)
    console.print(f"[green]Dataset written to {path}[/green]")


@cli.command()
def info():
    """Display information about the method and the commands"""
    console.print("""
[bold blue]Head-to-Tail Feature Fusion (H2T)[/bold blue]

[yellow]Method:[/yellow]
- Stage I learns a representation with instance-wise sampling
- Stage II freezes the backbone and retrains the classifier on
  class-balanced samples whose feature maps receive a fraction p
  of channels from instance-wise (head-biased) samples
- p = 0 is plain classifier retraining on balanced data

[yellow]Commands:[/yellow]
- train              one run: stage I, stage II, metrics, MANIFEST
- sweep-p            accuracy per split against p (shared stage I)
- ablate-sampler     BS+RS / BS+BS / BS+IS
- ablate-selection   First / Middle / Last / Random channel selection
- diagnose           prediction histograms, boundaries, rationale table
- gen-data           write the synthetic long-tailed dataset

[yellow]Example Usage:[/yellow]
  # Train with the default config
  h2t train --config configs/default.toml --out runs/demo

  # Finetune stage II only, from an existing stage-I checkpoint
  h2t train --stage2-only --from runs/demo/stage1.ckpt --out runs/resumed

  # Sweep p with four worker processes
  h2t sweep-p --p-values 0,0.3,1.0 --jobs 4 --out runs/sweep

  # Inspect a finished run
  h2t diagnose runs/demo

[yellow]Environment:[/yellow]
  H2T_LOG=DEBUG|INFO|WARNING|ERROR controls log verbosity
    """)


def main():
    """Entry point for the CLI"""
    cli()


if __name__ == '__main__':
    main()
