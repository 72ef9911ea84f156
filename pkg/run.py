#!/usr/bin/env python3
"""
Remix Imbalance Lab - command line entry point
Train, sweep and compare mixing regularizers on imbalanced datasets
"""

import logging
import os

import click
from dotenv import load_dotenv

# .env must be loaded before Config reads the environment
load_dotenv()

from config import Config  # noqa: E402
from utils.export import ReportGenerator, export_dataset_csv  # noqa: E402
from utils.experiments import compare_methods, run_kappa_sweep, run_sweep, run_tau_sweep  # noqa: E402
from utils.imbalance import build_profile  # noqa: E402
from utils.trainer import TrainPlan, prepare_data, run_training  # noqa: E402
from utils.validators import DATASETS, METHODS, handle_cli_errors, parse_values  # noqa: E402

logger = logging.getLogger(__name__)

PLAN_OPTIONS = [
    click.option('--dataset', type=click.Choice(DATASETS), default=Config.DATASET, show_default=True),
    click.option('--imbalance', type=click.Choice(['longtail', 'step']), default=Config.IMBALANCE_KIND,
                 show_default=True),
    click.option('--rho', type=float, default=Config.RHO, show_default=True, help='Imbalance ratio n_max / n_min'),
    click.option('--mu', type=float, default=Config.MU, show_default=True, help='Minority class fraction (step)'),
    click.option('--method', type=click.Choice(METHODS), default='remix', show_default=True),
    click.option('--alpha', type=float, default=Config.ALPHA, show_default=True),
    click.option('--tau', type=float, default=Config.TAU, show_default=True),
    click.option('--kappa', type=float, default=Config.KAPPA, show_default=True),
    click.option('--epochs', type=int, default=Config.EPOCHS, show_default=True),
    click.option('--batch-size', type=int, default=Config.BATCH_SIZE, show_default=True),
    click.option('--lr', type=float, default=Config.LEARNING_RATE, show_default=True),
    click.option('--momentum', type=float, default=Config.MOMENTUM, show_default=True),
    click.option('--weight-decay', type=float, default=Config.WEIGHT_DECAY, show_default=True),
    click.option('--milestones', default=Config.MILESTONES, show_default=True, help='"e1:m1,e2:m2"'),
    click.option('--defer', type=click.Choice(['none', 'drw', 'drs']), default=Config.DEFER_MODE,
                 show_default=True),
    click.option('--defer-epoch', type=int, default=None, help='Defaults to the first milestone'),
    click.option('--seed', type=int, default=0, show_default=True),
    click.option('--hidden', default=','.join(str(w) for w in Config.HIDDEN_WIDTHS), show_default=True),
    click.option('--activation', type=click.Choice(['relu', 'tanh']), default=Config.ACTIVATION,
                 show_default=True),
    click.option('--per-pair-lambda/--per-batch-lambda', default=Config.PER_PAIR_LAMBDA, show_default=True),
    click.option('--data-path', default=None, help='CIFAR-10 binary file or batches directory'),
    click.option('--n-per-class', type=int, default=None, help='Largest class size before imbalance'),
    click.option('--eval-per-class', type=int, default=None),
    click.option('--noise', type=float, default=Config.NOISE_SD, show_default=True),
    click.option('--augment/--no-augment', default=None, help='Image flip/crop (default on for cifar10)'),
    click.option('--resolution', type=int, default=None, help='Boundary raster size'),
]


def plan_options(f):
    for option in reversed(PLAN_OPTIONS):
        f = option(f)
    return f


def build_plan(out=None, **options) -> TrainPlan:
    # unset optional flags fall back to Config via TrainPlan.from_options
    options = {key: value for key, value in options.items() if value is not None}
    if out is not None:
        options['out'] = out
    return TrainPlan.from_options(options)


@click.group()
@click.option('--log-level', default=Config.LOG_LEVEL, show_default=True)
def cli(log_level):
    """Mixing regularizers for class-imbalanced classification"""
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.INFO), format=Config.LOG_FORMAT)


@cli.command()
@plan_options
@click.option('--out', default=Config.OUTPUT_DIR, show_default=True, help='Output directory')
@handle_cli_errors
def train(**options):
    """Train one plan and write its outputs"""
    plan = build_plan(**options)
    result = run_training(plan)
    report = result.final_report
    click.echo(f"top1={report.top1:.4f} minority_recall={result.minority_recall:.4f}")
    click.echo(f"outputs written to {plan.output_dir}")


@cli.command()
@plan_options
@click.option('--param', type=click.Choice(['tau', 'kappa', 'alpha']), default='tau', show_default=True)
@click.option('--values', 'sweep_values', default=None, help='Comma-separated values')
@click.option('--workers', type=int, default=None, help='Parallel cells (default MAX_WORKERS)')
@click.option('--out', default=Config.OUTPUT_DIR, show_default=True)
@handle_cli_errors
def sweep(param, sweep_values, workers, out, **options):
    """Train one cell per value of --param and write sweep.csv"""
    plan = build_plan(**options)
    if sweep_values is None:
        values = Config.DEFAULT_SWEEP_TAUS if param == 'tau' else [getattr(plan, param)]
    else:
        values = parse_values(sweep_values)
    logger.info("Sweeping %s over %s", param, values)
    if param == 'tau':
        table = run_tau_sweep(plan, values, workers)
    elif param == 'kappa':
        table = run_kappa_sweep(plan, values, workers)
    else:
        table = run_sweep(plan, param, values, workers)
    path = ReportGenerator(out).write_table(table, 'sweep.csv')
    click.echo(table.to_string(index=False))
    click.echo(f"sweep table written to {path}")


@cli.command()
@plan_options
@click.option('--methods', default='erm,mixup,remix', show_default=True)
@click.option('--seeds', default=','.join(str(s) for s in Config.DEFAULT_SEEDS), show_default=True)
@click.option('--workers', type=int, default=None)
@click.option('--out', default=Config.OUTPUT_DIR, show_default=True)
@handle_cli_errors
def compare(methods, seeds, workers, out, **options):
    """Train every method under every seed and summarize"""
    plan = build_plan(**options)
    method_list = [m.strip() for m in methods.split(',') if m.strip()]
    unknown = [m for m in method_list if m not in METHODS]
    if unknown:
        raise click.BadParameter(f"unknown methods {unknown}", param_hint='--methods')
    seed_list = [int(s) for s in parse_values(seeds)]
    logger.info("Comparing %s over seeds %s", method_list, seed_list)
    cells, summary = compare_methods(plan, method_list, seed_list, workers)
    generator = ReportGenerator(out)
    generator.write_table(cells, 'compare.csv')
    generator.write_table(summary, 'compare_summary.csv')
    click.echo(summary.to_string(index=False))


@cli.command('export-data')
@plan_options
@click.option('--path', 'csv_path', default=None, help='CSV file (default OUT/dataset.csv)')
@click.option('--out', default=Config.OUTPUT_DIR, show_default=True)
@handle_cli_errors
def export_data(csv_path, out, **options):
    """Write the imbalanced training set as x1,x2,...,label"""
    plan = build_plan(**options)
    train_set, _ = prepare_data(plan)
    target = csv_path or os.path.join(out, 'dataset.csv')
    export_dataset_csv(train_set, target)
    click.echo(f"{len(train_set)} samples written to {target}")


@cli.command()
@plan_options
@click.option('--out', default=None, help='Also write profile.txt here')
@handle_cli_errors
def profile(out, **options):
    """Print class sizes, effective numbers, weights and sampling probabilities"""
    plan = build_plan(**options)
    report = build_profile(plan.imbalance.sizes())
    click.echo(report.to_report(), nl=False)
    if out:
        ReportGenerator(out).write_profile(report)


if __name__ == '__main__':
    cli()
