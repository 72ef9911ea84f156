"""
Run output writers
Metrics, confusion matrix, decision-boundary raster, plan, class profile,
model parameters and experiment tables
"""

import logging
import os
from typing import TYPE_CHECKING, List, Optional, Sequence

import numpy as np
import pandas as pd

from utils.data import Dataset
from utils.imbalance import ClassProfile
from utils.model import ModelState, save_state
from utils.validators import DatasetIOError, require

if TYPE_CHECKING:
    from utils.trainer import BoundaryRaster, EvalReport, TrainingResult, TrainPlan

logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.csv'
CONFUSION_FILE = 'confusion_final.csv'
BOUNDARY_CSV = 'boundary.csv'
BOUNDARY_PGM = 'boundary.pgm'
PLAN_FILE = 'plan.txt'
PROFILE_FILE = 'profile.txt'
MODEL_FILE = 'model.rmxm'


def metrics_frame(reports: Sequence['EvalReport']) -> pd.DataFrame:
    """One row per epoch: epoch, top1, recall_0..recall_{C-1}"""
    rows = []
    for report in reports:
        row = {'epoch': report.epoch, 'top1': report.top1}
        for cls, recall in enumerate(report.per_class_recall):
            row[f'recall_{cls}'] = recall
        rows.append(row)
    return pd.DataFrame(rows)


def confusion_frame(report: 'EvalReport') -> pd.DataFrame:
    size = report.confusion.shape[0]
    frame = pd.DataFrame(report.confusion, columns=[f'pred_{c}' for c in range(size)])
    frame.insert(0, 'true', range(size))
    return frame


def boundary_frame(raster: 'BoundaryRaster') -> pd.DataFrame:
    points = raster.coordinates()
    rows, cols = np.divmod(np.arange(raster.grid.size), raster.resolution)
    return pd.DataFrame({
        'row': rows,
        'col': cols,
        'x': points[:, 0],
        'y': points[:, 1],
        'class': raster.grid.ravel(),
    })


def pgm_bytes(grid: np.ndarray, num_classes: int) -> bytes:
    """Binary P5 image; gray level class * 255 // (C - 1)"""
    require(num_classes >= 2, "a raster needs at least two classes", 'num_classes', num_classes)
    height, width = grid.shape
    gray = (np.asarray(grid, dtype=np.int64) * 255 // (num_classes - 1)).astype(np.uint8)
    return f"P5\n{width} {height}\n255\n".encode('ascii') + gray.tobytes()


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    flat = dataset.flat_features()
    frame = pd.DataFrame(flat, columns=[f'x{i + 1}' for i in range(flat.shape[1])])
    frame['label'] = dataset.labels
    return frame


def export_dataset_csv(dataset: Dataset, path: str) -> str:
    _ensure_parent(path)
    dataset_frame(dataset).to_csv(path, index=False)
    logger.info(f"Wrote {len(dataset)} samples to {path}")
    return path


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as e:
        raise DatasetIOError(f"Cannot create output directory {parent}: {e}", parent)


class ReportGenerator:
    """Writes the files of one run (or one experiment) into an output directory"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        try:
            os.makedirs(output_dir, exist_ok=True)
        except OSError as e:
            raise DatasetIOError(f"Cannot create output directory {output_dir}: {e}", output_dir)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def write_table(self, frame: pd.DataFrame, name: str) -> str:
        target = self.path(name)
        frame.to_csv(target, index=False)
        logger.debug(f"Wrote {len(frame)} rows to {target}")
        return target

    def write_text(self, text: str, name: str) -> str:
        target = self.path(name)
        with open(target, 'w', encoding='utf-8') as handle:
            handle.write(text)
        return target

    def write_metrics(self, reports: Sequence['EvalReport']) -> str:
        return self.write_table(metrics_frame(reports), METRICS_FILE)

    def write_confusion(self, report: 'EvalReport') -> str:
        return self.write_table(confusion_frame(report), CONFUSION_FILE)

    def write_plan(self, plan: 'TrainPlan') -> str:
        return self.write_text(plan.to_text(), PLAN_FILE)

    def write_profile(self, profile: ClassProfile) -> str:
        return self.write_text(profile.to_report(), PROFILE_FILE)

    def write_model(self, state: ModelState) -> str:
        target = self.path(MODEL_FILE)
        save_state(state, target)
        return target

    def write_boundary(self, raster: 'BoundaryRaster') -> List[str]:
        csv_path = self.write_table(boundary_frame(raster), BOUNDARY_CSV)
        pgm_path = self.path(BOUNDARY_PGM)
        with open(pgm_path, 'wb') as handle:
            handle.write(pgm_bytes(raster.grid, raster.num_classes))
        return [csv_path, pgm_path]

    def write_run(self, result: 'TrainingResult', raster: Optional['BoundaryRaster'] = None) -> List[str]:
        """Persist every output of a finished training run"""
        written = [
            self.write_plan(result.plan),
            self.write_profile(result.profile),
            self.write_metrics(result.reports),
            self.write_confusion(result.final_report),
            self.write_model(result.state),
        ]
        raster = raster or result.raster
        if raster is not None:
            written.extend(self.write_boundary(raster))
        logger.info(f"Wrote {len(written)} run outputs to {self.output_dir}")
        return written
