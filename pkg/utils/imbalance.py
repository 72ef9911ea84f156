"""
Imbalanced dataset construction and re-balancing quantities
Long-tailed / step class sizes, effective numbers, class weights, the
class-balanced sampler and the deferred re-balancing schedule
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Optional

import numpy as np

from utils.mixing import ClassCounts
from utils.validators import DataError, DimensionError, require

if TYPE_CHECKING:
    from utils.data import Dataset

logger = logging.getLogger(__name__)


class ImbalanceKind(Enum):
    LONG_TAILED = 'longtail'
    STEP = 'step'


class DeferMode(Enum):
    NONE = 'none'
    DRW = 'drw'
    DRS = 'drs'


class TrainingPhase(Enum):
    ERM_PHASE = 'erm_phase'
    DEFERRED_PHASE = 'deferred_phase'


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class ImbalanceSpec:
    """How class sizes are derived from the largest class"""
    kind: ImbalanceKind
    rho: float
    num_classes: int
    n_max: int
    mu: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, 'kind', ImbalanceKind(self.kind))
        require(self.rho >= 1.0, "imbalance ratio rho must be at least 1", 'rho', self.rho)
        require(self.n_max >= 1, "n_max must be at least 1", 'n_max', self.n_max)
        if self.kind is ImbalanceKind.STEP:
            require(0.0 < self.mu < 1.0, "mu must lie strictly between 0 and 1", 'mu', self.mu)

    def sizes(self) -> ClassCounts:
        if self.kind is ImbalanceKind.LONG_TAILED:
            return long_tailed_sizes(self.n_max, self.num_classes, self.rho)
        return step_sizes(self.n_max, self.num_classes, self.rho, self.mu)


def long_tailed_sizes(n_max: int, num_classes: int, rho: float) -> ClassCounts:
    """Exponential decay n_max * rho^(-i/(C-1)) from the first to the last class"""
    require(n_max >= 1, "n_max must be at least 1", 'n_max', n_max)
    require(num_classes >= 2, "at least two classes are required", 'num_classes', num_classes)
    require(rho >= 1.0, "imbalance ratio rho must be at least 1", 'rho', rho)
    counts = [
        max(1, _round_half_up(n_max * rho ** (-i / (num_classes - 1))))
        for i in range(num_classes)
    ]
    counts[0] = n_max
    return ClassCounts(tuple(counts))


def step_sizes(n_max: int, num_classes: int, rho: float, mu: float) -> ClassCounts:
    """First ceil((1-mu)*C) classes keep n_max, the rest get n_max / rho"""
    require(n_max >= 1, "n_max must be at least 1", 'n_max', n_max)
    require(num_classes >= 1, "at least one class is required", 'num_classes', num_classes)
    require(rho >= 1.0, "imbalance ratio rho must be at least 1", 'rho', rho)
    require(0.0 < mu < 1.0, "mu must lie strictly between 0 and 1", 'mu', mu)
    majority = math.ceil((1.0 - mu) * num_classes)
    minority_size = max(1, _round_half_up(n_max / rho))
    counts = [n_max] * majority + [minority_size] * (num_classes - majority)
    return ClassCounts(tuple(counts))


def subsample(dataset: 'Dataset', target: ClassCounts, rng: np.random.Generator) -> 'Dataset':
    """Keep a uniform subset of target[i] samples of each class, shuffled"""
    target = target if isinstance(target, ClassCounts) else ClassCounts(tuple(target))
    if target.num_classes != dataset.num_classes:
        raise DimensionError(
            f"Target has {target.num_classes} classes, dataset has {dataset.num_classes}",
            'target', target.counts, 'SHAPE_MISMATCH'
        )
    chosen = []
    for cls, wanted in enumerate(target):
        members = np.flatnonzero(dataset.labels == cls)
        if members.size < wanted:
            raise DataError(
                f"Class {cls} ({dataset.class_names[cls]}) has {members.size} samples, {wanted} requested",
                {'class': cls, 'available': int(members.size), 'requested': int(wanted)}
            )
        chosen.append(rng.choice(members, size=wanted, replace=False))
    order = rng.permutation(np.concatenate(chosen))
    logger.info(f"Subsampled {len(dataset)} samples to {order.size} with counts {target.counts}")
    return dataset.take(order)


def effective_number(n: int, beta: float) -> float:
    """E_n = (1 - beta^n) / (1 - beta)"""
    require(n >= 1, "n must be at least 1", 'n', n)
    require(0.0 <= beta < 1.0, "beta must lie in [0, 1)", 'beta', beta)
    return (1.0 - beta ** n) / (1.0 - beta)


@dataclass(frozen=True)
class ClassProfile:
    """Per-class counts with effective numbers, weights and sampling probabilities"""
    counts: ClassCounts
    beta: float
    effective_numbers: np.ndarray
    weights: np.ndarray
    sample_probs: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.num_classes

    def rows(self) -> List[Dict]:
        return [
            {
                'class': i,
                'count': self.counts[i],
                'effective_number': float(self.effective_numbers[i]),
                'weight': float(self.weights[i]),
                'sample_prob': float(self.sample_probs[i]),
            }
            for i in range(self.num_classes)
        ]

    def to_report(self) -> str:
        """Plain-text key/value report, one class per line"""
        lines = [f"beta = {self.beta!r}", f"imbalance_ratio = {self.counts.ratio!r}"]
        for row in self.rows():
            lines.append(' '.join(f"{key}={value!r}" for key, value in row.items()))
        return '\n'.join(lines) + '\n'


def build_profile(counts: ClassCounts, beta_override: Optional[float] = None) -> ClassProfile:
    """Effective-number weights and class-level sampling probabilities.

    beta defaults to (N - 1) / N with N the total sample count.
    """
    counts = counts if isinstance(counts, ClassCounts) else ClassCounts(tuple(counts))
    total = counts.total
    beta = beta_override if beta_override is not None else (total - 1) / total
    effective = np.asarray([effective_number(n, beta) for n in counts], dtype=np.float64)
    inverse = 1.0 / effective
    weights = inverse / inverse.mean()
    class_mass = counts.as_array() * inverse
    sample_probs = class_mass / class_mass.sum()
    return ClassProfile(counts=counts, beta=beta, effective_numbers=effective,
                        weights=weights, sample_probs=sample_probs)


class ClassBalancedSampler:
    """Draws sample indices class-first: a class by sample_probs, then a uniform member.

    Draws are with replacement; the caller owns the random stream.
    """

    def __init__(self, labels: np.ndarray, profile: ClassProfile):
        labels = np.asarray(labels, dtype=np.int64)
        self.profile = profile
        self.members = [np.flatnonzero(labels == c) for c in range(profile.num_classes)]
        empty = [c for c, m in enumerate(self.members) if m.size == 0]
        if empty:
            raise DataError(f"Classes {empty} have no samples to draw from", {'classes': empty})

    def draw_classes(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.profile.num_classes, size=size, p=self.profile.sample_probs)

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        classes = self.draw_classes(size, rng)
        indices = np.empty(size, dtype=np.int64)
        for cls, members in enumerate(self.members):
            slots = np.flatnonzero(classes == cls)
            if slots.size:
                indices[slots] = members[rng.integers(0, members.size, size=slots.size)]
        return indices


@dataclass(frozen=True)
class DeferredSchedule:
    """Epoch at which re-weighting or re-sampling switches on"""
    phase_boundary_epoch: int = 0
    mode: DeferMode = DeferMode.NONE

    def __post_init__(self):
        object.__setattr__(self, 'mode', DeferMode(self.mode))
        require(self.phase_boundary_epoch >= 0, "phase boundary must be nonnegative",
                'defer_epoch', self.phase_boundary_epoch)


def schedule_phase(epoch: int, schedule: DeferredSchedule) -> TrainingPhase:
    if schedule.mode is DeferMode.NONE or epoch < schedule.phase_boundary_epoch:
        return TrainingPhase.ERM_PHASE
    return TrainingPhase.DEFERRED_PHASE
