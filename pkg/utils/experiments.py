"""
Hyperparameter sweeps and method comparisons
Every cell reuses the base plan's seed so cells differ only in the swept value
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from utils.mixing import MixMethod
from utils.trainer import TrainPlan, run_training
from utils.validators import TrainingFault, ValidationError, require

logger = logging.getLogger(__name__)

SWEEPABLE = ('tau', 'kappa', 'alpha')


def _run_cell(plan: TrainPlan) -> Dict:
    """Train one plan; training faults mark the cell failed instead of aborting"""
    try:
        result = run_training(plan)
    except TrainingFault as e:
        logger.warning(f"Cell failed ({plan.method.value}, seed {plan.seed}): {e.message}")
        return {'top1': np.nan, 'minority_recall': np.nan, 'status': 'failed', 'error': e.message}
    return {
        'top1': result.final_report.top1,
        'minority_recall': result.minority_recall,
        'status': 'ok',
        'error': '',
    }


def _run_cells(plans: Sequence[TrainPlan], workers: Optional[int]) -> List[Dict]:
    workers = Config.MAX_WORKERS if workers is None else workers
    if workers > 1 and len(plans) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            # map keeps input order regardless of completion order
            return list(executor.map(_run_cell, plans))
    return [_run_cell(plan) for plan in plans]


def run_sweep(base_plan: TrainPlan, param: str, values: Iterable[float],
              workers: Optional[int] = None) -> pd.DataFrame:
    """Train base_plan once per value of ``param``.

    Returns columns <param>, top1, minority_recall, status, error in the
    order the values were given.
    """
    require(param in SWEEPABLE, f"sweep parameter must be one of {', '.join(SWEEPABLE)}", 'param', param)
    values = [float(v) for v in values]
    require(len(values) > 0, "at least one sweep value is required", 'values', values)
    # invalid values are rejected before any cell runs
    plans = [base_plan.with_overrides(**{param: value}, output_dir=None) for value in values]
    logger.info(f"Sweeping {param} over {values} with {base_plan.method.value}, seed {base_plan.seed}")

    cells = _run_cells(plans, workers)
    frame = pd.DataFrame(cells)
    frame.insert(0, param, values)
    failed = int((frame['status'] == 'failed').sum())
    if failed:
        logger.warning(f"{failed} of {len(values)} sweep cells failed")
    return frame


def _require_remix(plan: TrainPlan) -> None:
    if not plan.method.is_remix:
        raise ValidationError(
            f"Remix parameters have no effect for method '{plan.method.value}'",
            'method', plan.method.value, 'NOT_REMIX'
        )


def run_tau_sweep(base_plan: TrainPlan, taus: Iterable[float] = None,
                  workers: Optional[int] = None) -> pd.DataFrame:
    _require_remix(base_plan)
    return run_sweep(base_plan, 'tau', Config.DEFAULT_SWEEP_TAUS if taus is None else taus, workers)


def run_kappa_sweep(base_plan: TrainPlan, kappas: Iterable[float],
                    workers: Optional[int] = None) -> pd.DataFrame:
    _require_remix(base_plan)
    return run_sweep(base_plan, 'kappa', kappas, workers)


def compare_methods(base_plan: TrainPlan, methods: Sequence, seeds: Sequence[int] = None,
                    workers: Optional[int] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Train every method under every seed.

    Returns the per-cell table and a per-method summary with mean and
    standard deviation of top-1 and minority recall over successful seeds.
    """
    methods = [MixMethod(m) for m in methods]
    seeds = list(Config.DEFAULT_SEEDS if seeds is None else seeds)
    require(len(methods) > 0, "at least one method is required", 'methods', methods)
    require(len(seeds) > 0, "at least one seed is required", 'seeds', seeds)

    keys = [(method, seed) for method in methods for seed in seeds]
    plans = [base_plan.with_overrides(method=method, seed=seed, output_dir=None) for method, seed in keys]
    cells = pd.DataFrame(_run_cells(plans, workers))
    cells.insert(0, 'seed', [seed for _, seed in keys])
    cells.insert(0, 'method', [method.value for method, _ in keys])

    ok = cells[cells['status'] == 'ok']
    summary = (
        ok.groupby('method', sort=False)[['top1', 'minority_recall']]
        .agg(['mean', 'std'])
    )
    summary.columns = [f'{metric}_{stat}' for metric, stat in summary.columns]
    summary = summary.reindex([m.value for m in methods])
    summary.index.name = 'method'
    summary['runs'] = ok.groupby('method', sort=False).size().reindex(summary.index).fillna(0).astype(int)
    summary = summary.reset_index()
    return cells, summary
