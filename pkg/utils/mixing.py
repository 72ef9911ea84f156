"""
Mixing operators for imbalanced classification
Mixup, CutMix and Manifold Mixup feature rules plus the Remix label-factor rule
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from utils.validators import ClassIndexError, DimensionError, ParameterError, check_shapes, require

if TYPE_CHECKING:
    from utils.trainer import TrainPlan

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-9


class MixMethod(Enum):
    """Training method selector"""
    ERM = 'erm'
    MIXUP = 'mixup'
    REMIX = 'remix'
    CUTMIX = 'cutmix'
    REMIX_CUTMIX = 'remix_cutmix'
    MANIFOLD_MIXUP = 'manifold_mixup'
    REMIX_MANIFOLD = 'remix_manifold'

    @property
    def is_remix(self) -> bool:
        return self.value.startswith('remix')

    @property
    def is_cutmix(self) -> bool:
        return self in (MixMethod.CUTMIX, MixMethod.REMIX_CUTMIX)

    @property
    def is_manifold(self) -> bool:
        return self in (MixMethod.MANIFOLD_MIXUP, MixMethod.REMIX_MANIFOLD)

    @property
    def mixes(self) -> bool:
        return self is not MixMethod.ERM


@dataclass(frozen=True)
class MixFactor:
    """Feature-space and label-space mixing factors"""
    lambda_x: float
    lambda_y: float

    def __post_init__(self):
        require(0.0 <= self.lambda_x <= 1.0, "lambda_x must lie in [0, 1]", 'lambda_x', self.lambda_x)
        require(0.0 <= self.lambda_y <= 1.0, "lambda_y must lie in [0, 1]", 'lambda_y', self.lambda_y)


@dataclass(frozen=True)
class SoftLabel:
    """Probability vector over C classes"""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise DimensionError("SoftLabel must be a non-empty vector", 'probs', probs.shape, 'SHAPE_MISMATCH')
        require(bool(np.all(probs >= 0.0)), "SoftLabel entries must be nonnegative", 'probs', probs)
        require(abs(float(probs.sum()) - 1.0) <= SUM_TOLERANCE, "SoftLabel must sum to 1", 'probs', probs)
        object.__setattr__(self, 'probs', probs)

    @classmethod
    def one_hot(cls, label: int, num_classes: int) -> 'SoftLabel':
        _check_class_index(label, num_classes)
        probs = np.zeros(num_classes)
        probs[label] = 1.0
        return cls(probs)

    @property
    def num_classes(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class CutMask:
    """Rectangular patch, stored after clipping to the image bounds"""
    x0: int
    y0: int
    width: int
    height: int
    image_w: int
    image_h: int
    clipped: bool = False

    def __post_init__(self):
        require(0 <= self.x0 and 0 <= self.y0, "mask corner must be inside the image", 'mask', self)
        require(self.x0 + self.width <= self.image_w and self.y0 + self.height <= self.image_h,
                "mask must fit inside the image", 'mask', self)

    @property
    def area_fraction(self) -> float:
        return (self.width * self.height) / (self.image_w * self.image_h)

    @property
    def effective_lambda(self) -> float:
        """Share of pixels kept from the first image"""
        return 1.0 - self.area_fraction

    def as_array(self) -> np.ndarray:
        """Binary mask M: 0 inside the patch, 1 elsewhere"""
        keep = np.ones((self.image_h, self.image_w))
        keep[self.y0:self.y0 + self.height, self.x0:self.x0 + self.width] = 0.0
        return keep


@dataclass(frozen=True)
class ClassCounts:
    """Per-class sample counts n_i"""
    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        require(len(counts) >= 1, "at least one class count is required", 'counts', counts)
        require(all(c >= 1 for c in counts), "every class count must be at least 1", 'counts', counts)
        object.__setattr__(self, 'counts', counts)

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, index: int) -> int:
        return self.counts[index]

    def __iter__(self):
        return iter(self.counts)

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def ratio(self) -> float:
        return max(self.counts) / min(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    def minority_classes(self) -> List[int]:
        """Classes at the smallest count; empty when the counts are balanced"""
        if self.ratio == 1.0:
            return []
        low = min(self.counts)
        return [i for i, c in enumerate(self.counts) if c == low]


@dataclass
class MixedBatch:
    """Mixed training inputs with their soft targets.

    For manifold methods ``inputs`` holds the first pair members unmixed,
    ``partner_inputs`` the second members, and ``layer`` the depth at which
    the model mixes hidden activations with ``lambda_x``.
    """
    inputs: np.ndarray
    targets: np.ndarray
    lambda_x: np.ndarray
    lambda_y: np.ndarray
    partner_inputs: Optional[np.ndarray] = None
    layer: Optional[int] = None
    masks: List[CutMask] = field(default_factory=list)

    @property
    def is_manifold(self) -> bool:
        return self.layer is not None

    def __len__(self) -> int:
        return self.targets.shape[0]

    def soft_labels(self) -> List[SoftLabel]:
        return [SoftLabel(row) for row in self.targets]

    def factors(self) -> List[MixFactor]:
        return [MixFactor(float(x), float(y)) for x, y in zip(self.lambda_x, self.lambda_y)]


def _check_class_index(label: int, num_classes: int) -> None:
    if not 0 <= int(label) < num_classes:
        raise ClassIndexError(f"Class index {label} outside [0, {num_classes})", 'label', label, 'INDEX_OUT_OF_RANGE')


def _check_lambda(value, name: str = 'lambda_x') -> None:
    arr = np.asarray(value, dtype=np.float64)
    require(bool(np.all((arr >= 0.0) & (arr <= 1.0))), f"{name} must lie in [0, 1]", name, value)


def sample_lambda(alpha: float, rng: np.random.Generator, size: Optional[int] = None):
    """Draw lambda_x ~ Beta(alpha, alpha)"""
    require(alpha is not None and alpha > 0, "alpha must be positive", 'alpha', alpha)
    return rng.beta(alpha, alpha, size=size)


def mix_features(x_i: np.ndarray, x_j: np.ndarray, lambda_x) -> np.ndarray:
    """Elementwise convex combination lambda_x * x_i + (1 - lambda_x) * x_j.

    ``lambda_x`` may be a scalar or one factor per leading row.
    """
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    check_shapes(x_i.shape, x_j.shape)
    lam = np.asarray(lambda_x, dtype=np.float64)
    _check_lambda(lam)
    if lam.ndim == 1:
        lam = lam.reshape((-1,) + (1,) * (x_i.ndim - 1))
    mixed = lam * x_i + (1.0 - lam) * x_j
    # identical inputs stay bit-exact
    return np.where(x_i == x_j, x_i, mixed)


def mix_labels(y_i: int, y_j: int, lambda_y: float, num_classes: int) -> SoftLabel:
    """lambda_y * onehot(y_i) + (1 - lambda_y) * onehot(y_j)"""
    _check_class_index(y_i, num_classes)
    _check_class_index(y_j, num_classes)
    _check_lambda(lambda_y, 'lambda_y')
    if y_i == y_j:
        return SoftLabel.one_hot(y_i, num_classes)
    probs = np.zeros(num_classes)
    probs[y_i] += lambda_y
    probs[y_j] += 1.0 - lambda_y
    return SoftLabel(probs)


def soft_targets(y_i: np.ndarray, y_j: np.ndarray, lambda_y: np.ndarray, num_classes: int) -> np.ndarray:
    """Row-wise mix_labels for a batch; returns a (B, C) array"""
    y_i = np.asarray(y_i, dtype=np.int64)
    y_j = np.asarray(y_j, dtype=np.int64)
    lambda_y = np.broadcast_to(np.asarray(lambda_y, dtype=np.float64), y_i.shape)
    for labels in (y_i, y_j):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            bad = labels[(labels < 0) | (labels >= num_classes)][0]
            _check_class_index(int(bad), num_classes)
    _check_lambda(lambda_y, 'lambda_y')
    rows = np.arange(y_i.size)
    targets = np.zeros((y_i.size, num_classes))
    targets[rows, y_i] += lambda_y
    targets[rows, y_j] += 1.0 - lambda_y
    same = y_i == y_j
    targets[same] = 0.0
    targets[rows[same], y_i[same]] = 1.0
    return targets


def is_kappa_majority(n_i: int, n_j: int, kappa: float) -> bool:
    """True when class count n_i is at least kappa times n_j"""
    require(n_i >= 1 and n_j >= 1, "class counts must be at least 1", 'counts', (n_i, n_j))
    return n_i >= kappa * n_j


def remix_label_factor(lambda_x: float, n_i: int, n_j: int, tau: float, kappa: float) -> float:
    """Label mixing factor lambda_y.

    0 when sample i is kappa-majority and lambda_x < tau, 1 when sample j is
    kappa-majority and 1 - lambda_x < tau, lambda_x otherwise.
    """
    require(n_i >= 1 and n_j >= 1, "class counts must be at least 1", 'counts', (n_i, n_j))
    _check_lambda(lambda_x)
    # the first branch wins the kappa=1, n_i == n_j tie
    if n_i >= kappa * n_j and lambda_x < tau:
        return 0.0
    if n_j >= kappa * n_i and (1.0 - lambda_x) < tau:
        return 1.0
    return lambda_x


def remix_label_factors(lambda_x: np.ndarray, n_i: np.ndarray, n_j: np.ndarray,
                        tau: float, kappa: float) -> np.ndarray:
    """Vectorised remix_label_factor over aligned arrays"""
    lambda_x = np.asarray(lambda_x, dtype=np.float64)
    n_i = np.asarray(n_i, dtype=np.float64)
    n_j = np.asarray(n_j, dtype=np.float64)
    require(bool(np.all(n_i >= 1)) and bool(np.all(n_j >= 1)), "class counts must be at least 1", 'counts')
    _check_lambda(lambda_x)
    minority_j = (n_i >= kappa * n_j) & (lambda_x < tau)
    minority_i = (n_j >= kappa * n_i) & ((1.0 - lambda_x) < tau)
    return np.select([minority_j, minority_i], [0.0, 1.0], default=lambda_x)


def image_dims(feature_shape: Sequence[int]) -> Tuple[int, int]:
    """(H, W) of the trailing axes; a vector of length d is a 1 x d image"""
    if len(feature_shape) == 1:
        return 1, int(feature_shape[0])
    return int(feature_shape[-2]), int(feature_shape[-1])


def sample_cut_mask(image_w: int, image_h: int, lambda_x: float, rng: np.random.Generator) -> CutMask:
    """Rectangular patch covering a (1 - lambda_x) share of the image before clipping"""
    require(image_w >= 1 and image_h >= 1, "image dimensions must be positive", 'image', (image_w, image_h))
    _check_lambda(lambda_x)
    cut = math.sqrt(1.0 - lambda_x)
    r_w = int(math.floor(image_w * cut + 0.5))
    r_h = int(math.floor(image_h * cut + 0.5))
    cx = int(rng.integers(image_w))
    cy = int(rng.integers(image_h))

    def _span(center: int, size: int, limit: int) -> Tuple[int, int, bool]:
        # a patch as large as the image covers it entirely
        if size >= limit:
            return 0, limit, False
        start = center - size // 2
        stop = start + size
        lo, hi = max(start, 0), min(stop, limit)
        return lo, hi, (lo != start or hi != stop)

    x0, x1, clip_x = _span(cx, r_w, image_w)
    y0, y1, clip_y = _span(cy, r_h, image_h)
    return CutMask(x0, y0, x1 - x0, y1 - y0, image_w, image_h, clip_x or clip_y)


def apply_cut_mask(x_i: np.ndarray, x_j: np.ndarray, mask: CutMask) -> np.ndarray:
    """Paste the masked patch of x_j into x_i; trailing axes are (H, W)"""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    check_shapes(x_i.shape, x_j.shape, 'images')
    if x_i.ndim < 2 or x_i.shape[-2:] != (mask.image_h, mask.image_w):
        raise DimensionError(
            f"Image shape {x_i.shape} does not match mask {mask.image_h}x{mask.image_w}",
            'images', x_i.shape, 'SHAPE_MISMATCH'
        )
    out = x_i.copy()
    rows = slice(mask.y0, mask.y0 + mask.height)
    cols = slice(mask.x0, mask.x0 + mask.width)
    out[..., rows, cols] = x_j[..., rows, cols]
    return out


def form_pairs(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Partner index for every batch row: a uniform permutation of the batch"""
    return rng.permutation(batch_size)


def stack_pairs(pairs: Sequence[Tuple]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Turn (LabeledSample, LabeledSample) pairs into aligned arrays"""
    if not pairs:
        raise ParameterError("Cannot mix an empty batch", 'pairs', 0, 'EMPTY_BATCH')
    x_i = np.stack([np.asarray(a.features, dtype=np.float64) for a, _ in pairs])
    x_j = np.stack([np.asarray(b.features, dtype=np.float64) for _, b in pairs])
    y_i = np.asarray([a.label for a, _ in pairs], dtype=np.int64)
    y_j = np.asarray([b.label for _, b in pairs], dtype=np.int64)
    return x_i, y_i, x_j, y_j


def _cutmix_features(x_i: np.ndarray, x_j: np.ndarray, lam: np.ndarray, per_pair: bool,
                     rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, List[CutMask]]:
    feature_shape = x_i.shape[1:]
    h, w = image_dims(feature_shape)
    view_shape = (x_i.shape[0],) + (tuple(feature_shape[:-2]) if len(feature_shape) >= 2 else ()) + (h, w)
    a = x_i.reshape(view_shape)
    b = x_j.reshape(view_shape)
    if per_pair:
        masks = [sample_cut_mask(w, h, float(l), rng) for l in lam]
        mixed = np.stack([apply_cut_mask(a[n], b[n], m) for n, m in enumerate(masks)])
    else:
        masks = [sample_cut_mask(w, h, float(lam[0]), rng)]
        mixed = apply_cut_mask(a, b, masks[0])
    effective = np.asarray([m.effective_lambda for m in masks], dtype=np.float64)
    effective = np.broadcast_to(effective, lam.shape).copy()
    return mixed.reshape(x_i.shape), effective, masks


def make_mixed_batch(x_i: np.ndarray, y_i: np.ndarray, x_j: np.ndarray, y_j: np.ndarray,
                     method: MixMethod, counts: ClassCounts, plan: 'TrainPlan',
                     rng: np.random.Generator, eligible_layers: int = 1) -> MixedBatch:
    """Mix paired samples per ``method``.

    One lambda_x is drawn for the whole batch unless ``plan.per_pair_lambda``.
    CutMix variants label with the post-clipping lambda. Manifold variants
    return the unmixed pairs plus a uniformly chosen layer in
    [0, eligible_layers).
    """
    method = MixMethod(method)
    if not method.mixes:
        raise ParameterError("ERM trains on raw samples and does not mix", 'method', method.value, 'NO_MIXING')
    y_i = np.asarray(y_i, dtype=np.int64)
    y_j = np.asarray(y_j, dtype=np.int64)
    if y_i.size == 0:
        raise ParameterError("Cannot mix an empty batch", 'pairs', 0, 'EMPTY_BATCH')
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    check_shapes(x_i.shape, x_j.shape)
    check_shapes(y_i.shape, y_j.shape, 'labels')
    num_classes = counts.num_classes
    batch = y_i.size

    per_pair = bool(getattr(plan, 'per_pair_lambda', False))
    if per_pair:
        lam = np.asarray(sample_lambda(plan.alpha, rng, size=batch), dtype=np.float64)
    else:
        lam = np.full(batch, float(sample_lambda(plan.alpha, rng)))

    partner = None
    layer = None
    masks: List[CutMask] = []
    if method.is_cutmix:
        inputs, lam, masks = _cutmix_features(x_i, x_j, lam, per_pair, rng)
    elif method.is_manifold:
        require(eligible_layers >= 1, "at least one mixing layer is required", 'eligible_layers', eligible_layers)
        layer = int(rng.integers(eligible_layers))
        inputs, partner = x_i, x_j
    else:
        inputs = mix_features(x_i, x_j, lam)

    if method.is_remix:
        n = counts.as_array()
        try:
            n_i, n_j = n[y_i], n[y_j]
        except IndexError:
            bad = int(max(y_i.max(), y_j.max()))
            raise ClassIndexError(f"Class {bad} has no count", 'label', bad, 'INDEX_OUT_OF_RANGE')
        lam_y = remix_label_factors(lam, n_i, n_j, plan.tau, plan.kappa)
    else:
        lam_y = lam.copy()

    targets = soft_targets(y_i, y_j, lam_y, num_classes)
    logger.debug(f"Mixed batch of {batch} with {method.value}, lambda_x={lam[0]:.4f}, layer={layer}")
    return MixedBatch(inputs=inputs, targets=targets, lambda_x=lam, lambda_y=lam_y,
                      partner_inputs=partner, layer=layer, masks=masks)


def mix_pairs(pairs: Sequence[Tuple], method: MixMethod, counts: ClassCounts, plan: 'TrainPlan',
              rng: np.random.Generator, eligible_layers: int = 1) -> MixedBatch:
    """make_mixed_batch over a sequence of (LabeledSample, LabeledSample) pairs"""
    x_i, y_i, x_j, y_j = stack_pairs(pairs)
    return make_mixed_batch(x_i, y_i, x_j, y_j, method, counts, plan, rng, eligible_layers)
