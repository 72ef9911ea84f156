"""
Datasets for the imbalance experiments
Toy 2D generators (two moons / circles / blobs) and the CIFAR-10 binary reader
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from config import Config
from utils.mixing import ClassCounts
from utils.validators import ClassIndexError, DataFormatError, DatasetIOError, DimensionError, ValidationError, require

logger = logging.getLogger(__name__)

CIFAR_SHAPE = (3, 32, 32)
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR_NUM_CLASSES = 10


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int


@dataclass
class Dataset:
    """Feature array of shape (n, *feature_shape) with integer labels"""
    features: np.ndarray
    labels: np.ndarray
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels",
                'labels', self.labels.shape, 'SHAPE_MISMATCH'
            )
        if not self.class_names:
            top = int(self.labels.max()) + 1 if self.labels.size else 0
            self.class_names = [f"class_{i}" for i in range(top)]
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ClassIndexError(
                f"Labels must lie in [0, {len(self.class_names)})", 'labels',
                (int(self.labels.min()), int(self.labels.max())), 'INDEX_OUT_OF_RANGE'
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __iter__(self) -> Iterator[LabeledSample]:
        for x, y in zip(self.features, self.labels):
            yield LabeledSample(x, int(y))

    @property
    def feature_shape(self) -> Tuple[int, ...]:
        return tuple(self.features.shape[1:])

    @property
    def input_width(self) -> int:
        return int(np.prod(self.feature_shape))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def counts(self) -> ClassCounts:
        return ClassCounts(tuple(int(c) for c in self.class_counts()))

    def take(self, indices: Sequence[int]) -> 'Dataset':
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], list(self.class_names))

    def flat_features(self) -> np.ndarray:
        return self.features.reshape(len(self), -1)


def _two_class(first: np.ndarray, second: np.ndarray) -> Dataset:
    features = np.concatenate([first, second])
    labels = np.concatenate([np.zeros(len(first), dtype=np.int64), np.ones(len(second), dtype=np.int64)])
    return Dataset(features, labels, list(Config.TOY_CLASS_NAMES))


def _add_noise(points: np.ndarray, noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    if noise_sd > 0:
        return points + rng.normal(0.0, noise_sd, size=points.shape)
    return points


def make_two_moons(n_per_class: int, noise_sd: float, rng: np.random.Generator) -> Dataset:
    """Interleaving half circles of unit radius; the second is (1 - cos t, 1 - sin t) lowered by 0.5"""
    require(n_per_class >= 1, "n_per_class must be at least 1", 'n_per_class', n_per_class)
    require(noise_sd >= 0, "noise_sd must be nonnegative", 'noise_sd', noise_sd)
    t = np.linspace(0.0, np.pi, n_per_class)
    outer = np.column_stack([np.cos(t), np.sin(t)])
    inner = np.column_stack([1.0 - np.cos(t), 1.0 - np.sin(t) - 0.5])
    points = _add_noise(np.concatenate([outer, inner]), noise_sd, rng)
    return _two_class(points[:n_per_class], points[n_per_class:])


def make_two_circles(n_per_class: int, noise_sd: float, rng: np.random.Generator) -> Dataset:
    """Concentric circles: radius 1.0 for class 0, 0.5 for class 1"""
    require(n_per_class >= 1, "n_per_class must be at least 1", 'n_per_class', n_per_class)
    require(noise_sd >= 0, "noise_sd must be nonnegative", 'noise_sd', noise_sd)
    t = np.linspace(0.0, 2.0 * np.pi, n_per_class, endpoint=False)
    unit = np.column_stack([np.cos(t), np.sin(t)])
    points = _add_noise(np.concatenate([unit, 0.5 * unit]), noise_sd, rng)
    return _two_class(points[:n_per_class], points[n_per_class:])


def make_two_blobs(n_per_class: int, noise_sd: float, rng: np.random.Generator) -> Dataset:
    """Isotropic Gaussians at (-1, -1) and (1, 1); extra noise_sd widens them"""
    require(n_per_class >= 1, "n_per_class must be at least 1", 'n_per_class', n_per_class)
    require(noise_sd >= 0, "noise_sd must be nonnegative", 'noise_sd', noise_sd)
    first = rng.normal([-1.0, -1.0], Config.BLOB_SD, size=(n_per_class, 2))
    second = rng.normal([1.0, 1.0], Config.BLOB_SD, size=(n_per_class, 2))
    points = _add_noise(np.concatenate([first, second]), noise_sd, rng)
    return _two_class(points[:n_per_class], points[n_per_class:])


TOY_GENERATORS = {
    'two_moons': make_two_moons,
    'two_circles': make_two_circles,
    'two_blobs': make_two_blobs,
}


def read_cifar10_file(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Raw uint8 pixels (n, 3, 32, 32) and labels from one CIFAR-10 binary file"""
    try:
        with open(path, 'rb') as handle:
            raw = handle.read()
    except FileNotFoundError:
        raise DatasetIOError(f"CIFAR-10 file not found: {path}", path)
    except OSError as e:
        raise DatasetIOError(f"Cannot read CIFAR-10 file {path}: {e}", path)

    complete, remainder = divmod(len(raw), CIFAR_RECORD_BYTES)
    if remainder:
        raise DataFormatError(
            f"Truncated CIFAR-10 record in {path}: {remainder} of {CIFAR_RECORD_BYTES} bytes",
            complete * CIFAR_RECORD_BYTES, path
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(complete, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_NUM_CLASSES)
    if bad.size:
        record = int(bad[0])
        raise DataFormatError(
            f"Label {labels[record]} outside 0-{CIFAR_NUM_CLASSES - 1} in {path}",
            record * CIFAR_RECORD_BYTES, path
        )
    pixels = records[:, 1:].reshape((complete,) + CIFAR_SHAPE)
    return pixels, labels


def normalize_pixels(pixels: np.ndarray) -> np.ndarray:
    """Scale to [0, 1] then apply the per-channel mean/std from Config"""
    scaled = pixels.astype(np.float64) / 255.0
    mean = np.asarray(Config.CIFAR_MEAN).reshape(1, 3, 1, 1)
    std = np.asarray(Config.CIFAR_STD).reshape(1, 3, 1, 1)
    return (scaled - mean) / std


def load_cifar10_binary(path: str, split: str = 'train') -> Dataset:
    """Load a CIFAR-10 binary file, or the train/test files of a batches directory"""
    if os.path.isdir(path):
        names = Config.CIFAR_TRAIN_FILES if split == 'train' else Config.CIFAR_TEST_FILES
        files = [os.path.join(path, name) for name in names]
    else:
        files = [path]

    parts = [read_cifar10_file(f) for f in files]
    pixels = np.concatenate([p for p, _ in parts])
    labels = np.concatenate([l for _, l in parts])
    features = normalize_pixels(pixels)
    logger.info(f"Loaded {labels.size} CIFAR-10 records from {len(files)} file(s) at {path}")
    return Dataset(features, labels, list(Config.CIFAR_CLASS_NAMES))


def augment_images(images: np.ndarray, rng: np.random.Generator, pad: int = None) -> np.ndarray:
    """Random horizontal flip plus zero pad-and-crop, per image"""
    pad = Config.CIFAR_PAD if pad is None else pad
    n, _, h, w = images.shape
    flips = rng.random(n) < 0.5
    out = np.where(flips[:, None, None, None], images[..., ::-1], images)
    if pad <= 0:
        return out
    padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    return np.stack([
        padded[i, :, dy:dy + h, dx:dx + w] for i, (dy, dx) in enumerate(offsets)
    ])


def is_image_shape(feature_shape: Sequence[int]) -> bool:
    return len(feature_shape) == 3


def make_toy_dataset(name: str, n_per_class: int, noise_sd: float,
                     rng: np.random.Generator) -> Dataset:
    try:
        generator = TOY_GENERATORS[name]
    except KeyError:
        raise ValidationError(f"Unknown toy dataset '{name}'", 'dataset', name, 'UNKNOWN_DATASET')
    return generator(n_per_class, noise_sd, rng)
