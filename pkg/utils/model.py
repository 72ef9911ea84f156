"""
Fully-connected classifier with manual backpropagation
Soft-label cross-entropy, SGD with momentum/weight decay, milestone learning
rates, a split forward pass for manifold mixing, and the RMXM state file.

RMXM layout (little-endian): b"RMXM", u32 format version, u32 layer count,
u32 activation code, then (u32 rows, u32 cols) per layer, then for every layer
its weight matrix row-major followed by its bias vector, all as float64.
"""

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from utils.mixing import SoftLabel
from utils.validators import DataFormatError, DatasetIOError, DimensionError, TrainingFault, require

logger = logging.getLogger(__name__)

MAGIC = b'RMXM'
FORMAT_VERSION = 1


class Activation(Enum):
    RELU = 'relu'
    TANH = 'tanh'


ACTIVATION_CODES = {Activation.RELU: 0, Activation.TANH: 1}


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to class count"""
    layer_widths: Tuple[int, ...]
    activation: Activation = Activation.RELU
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        require(len(widths) >= 3, "an MLP needs input, at least one hidden layer and an output",
                'layer_widths', widths)
        require(all(w >= 1 for w in widths), "layer widths must be positive", 'layer_widths', widths)
        object.__setattr__(self, 'layer_widths', widths)
        object.__setattr__(self, 'activation', Activation(self.activation))

    @property
    def num_layers(self) -> int:
        return len(self.layer_widths) - 1


@dataclass(frozen=True)
class OptimSpec:
    """SGD hyperparameters with (epoch, multiplier) milestones"""
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    milestones: Tuple[Tuple[int, float], ...] = ()

    def __post_init__(self):
        milestones = tuple((int(e), float(m)) for e, m in self.milestones)
        require(self.lr > 0, "learning rate must be positive", 'lr', self.lr)
        require(0.0 <= self.momentum < 1.0, "momentum must lie in [0, 1)", 'momentum', self.momentum)
        require(self.weight_decay >= 0.0, "weight decay must be nonnegative", 'weight_decay', self.weight_decay)
        epochs = [e for e, _ in milestones]
        require(all(a < b for a, b in zip(epochs, epochs[1:])), "milestones must be strictly increasing",
                'milestones', milestones)
        require(all(0.0 < m <= 1.0 for _, m in milestones), "milestone multipliers must lie in (0, 1]",
                'milestones', milestones)
        object.__setattr__(self, 'milestones', milestones)

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for start, multiplier in self.milestones:
            if epoch >= start:
                lr *= multiplier
        return lr


@dataclass
class ModelState:
    """Weights (fan_in, fan_out), biases and their momentum buffers"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: Activation = Activation.RELU
    velocity_w: List[np.ndarray] = field(default_factory=list)
    velocity_b: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.activation = Activation(self.activation)
        if not self.velocity_w:
            self.velocity_w = [np.zeros_like(w) for w in self.weights]
        if not self.velocity_b:
            self.velocity_b = [np.zeros_like(b) for b in self.biases]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def layer_widths(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.weights + self.biases + self.velocity_w + self.velocity_b)

    def copy(self) -> 'ModelState':
        return ModelState(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            velocity_w=[v.copy() for v in self.velocity_w],
            velocity_b=[v.copy() for v in self.velocity_b],
        )


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, state: ModelState) -> 'Gradients':
        return cls([np.zeros_like(w) for w in state.weights], [np.zeros_like(b) for b in state.biases])


def init_state(spec: MlpSpec) -> ModelState:
    """He-uniform weights for relu, Xavier-uniform for tanh; zero biases"""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        if spec.activation is Activation.RELU:
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelState(weights, biases, spec.activation)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(pre: np.ndarray, post: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return (pre > 0.0).astype(np.float64)
    return 1.0 - post * post


def _as_rows(state: ModelState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != state.input_width:
        x = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
    if x.shape[-1] != state.input_width:
        raise DimensionError(
            f"Input width {x.shape[-1]} does not match model input {state.input_width}",
            'x', x.shape, 'SHAPE_MISMATCH'
        )
    return x


def _run_layers(state: ModelState, h: np.ndarray, start: int, stop: int) -> np.ndarray:
    last = state.num_layers - 1
    for l in range(start, stop):
        z = h @ state.weights[l] + state.biases[l]
        h = _activate(z, state.activation) if l < last else z
    return h


def _check_layer(state: ModelState, k: int) -> None:
    require(0 <= k < state.num_layers, f"layer index must lie in [0, {state.num_layers})", 'k', k, 'INVALID_LAYER')


def forward(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Pre-softmax logits for one vector or a batch of rows"""
    return _run_layers(state, _as_rows(state, x), 0, state.num_layers)


def forward_split(state: ModelState, x: np.ndarray, k: int) -> np.ndarray:
    """Activation after the first k layers; k = 0 is the raw input"""
    _check_layer(state, k)
    return _run_layers(state, _as_rows(state, x), 0, k)


def resume_from(state: ModelState, h: np.ndarray, k: int) -> np.ndarray:
    """Finish the forward pass from the activation after k layers"""
    _check_layer(state, k)
    return _run_layers(state, np.asarray(h, dtype=np.float64), k, state.num_layers)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def soft_cross_entropy(logits: np.ndarray, target, sample_weight: float = 1.0) -> float:
    """-sample_weight * sum_c target[c] * log softmax(logits)[c]"""
    probs = target.probs if isinstance(target, SoftLabel) else np.asarray(target, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if probs.shape != logits.shape:
        raise DimensionError(
            f"Target shape {probs.shape} does not match logits {logits.shape}", 'target', probs.shape, 'SHAPE_MISMATCH'
        )
    require(sample_weight > 0, "sample weight must be positive", 'sample_weight', sample_weight)
    return float(-sample_weight * np.dot(probs, log_softmax(logits)))


@dataclass
class ManifoldMix:
    """Second pair members and the depth/factor at which activations mix"""
    partner_inputs: np.ndarray
    lambda_x: np.ndarray
    layer: int


def _trace(state: ModelState, h: np.ndarray, start: int, stop: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    last = state.num_layers - 1
    activations, pre = [h], []
    for l in range(start, stop):
        z = h @ state.weights[l] + state.biases[l]
        pre.append(z)
        h = _activate(z, state.activation) if l < last else z
        activations.append(h)
    return activations, pre


def _backprop(state: ModelState, activations: List[np.ndarray], pre: List[np.ndarray], start: int,
              delta: np.ndarray, grads: Gradients, input_grad: bool) -> Optional[np.ndarray]:
    last = state.num_layers - 1
    for i in reversed(range(len(pre))):
        l = start + i
        if l < last:
            delta = delta * _activation_grad(pre[i], activations[i + 1], state.activation)
        grads.weights[l] += activations[i].T @ delta
        grads.biases[l] += delta.sum(axis=0)
        if i > 0 or input_grad:
            delta = delta @ state.weights[l].T
    return delta


def _prepare(state: ModelState, inputs: np.ndarray, targets: np.ndarray,
             weights: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = _as_rows(state, inputs)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError("Batch must be a nonempty 2D array", 'inputs', x.shape, 'EMPTY_BATCH')
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (x.shape[0], state.num_classes):
        raise DimensionError(
            f"Targets {targets.shape} do not match batch ({x.shape[0]}, {state.num_classes})",
            'targets', targets.shape, 'SHAPE_MISMATCH'
        )
    w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (x.shape[0],):
        raise DimensionError("One weight per sample is required", 'weights', w.shape, 'SHAPE_MISMATCH')
    return x, targets, w


def _logits_with_trace(state: ModelState, x: np.ndarray, mix: Optional[ManifoldMix]):
    if mix is None:
        acts, pre = _trace(state, x, 0, state.num_layers)
        return acts[-1], (acts, pre)
    _check_layer(state, mix.layer)
    partner = _as_rows(state, mix.partner_inputs)
    lam = np.asarray(mix.lambda_x, dtype=np.float64).reshape(-1, 1)
    acts_a, pre_a = _trace(state, x, 0, mix.layer)
    acts_b, pre_b = _trace(state, partner, 0, mix.layer)
    mixed = lam * acts_a[-1] + (1.0 - lam) * acts_b[-1]
    acts_t, pre_t = _trace(state, mixed, mix.layer, state.num_layers)
    return acts_t[-1], (acts_a, pre_a, acts_b, pre_b, acts_t, pre_t, lam)


def batch_loss(state: ModelState, inputs: np.ndarray, targets: np.ndarray,
               weights: Optional[np.ndarray] = None, mix: Optional[ManifoldMix] = None) -> float:
    """Mean weighted soft cross-entropy over the batch"""
    x, targets, w = _prepare(state, inputs, targets, weights)
    logits, _ = _logits_with_trace(state, x, mix)
    return float(np.mean(-w * np.sum(targets * log_softmax(logits), axis=1)))


def backward(state: ModelState, inputs: np.ndarray, targets: np.ndarray,
             weights: Optional[np.ndarray] = None, mix: Optional[ManifoldMix] = None) -> Tuple[Gradients, float]:
    """Gradients of the mean weighted loss and the loss itself.

    With ``mix`` the activations after ``mix.layer`` layers are mixed and the
    gradient flows back through both pair members.
    """
    x, targets, w = _prepare(state, inputs, targets, weights)
    logits, trace = _logits_with_trace(state, x, mix)
    logp = log_softmax(logits)
    loss = float(np.mean(-w * np.sum(targets * logp, axis=1)))

    batch = x.shape[0]
    mass = targets.sum(axis=1, keepdims=True)
    delta = w[:, None] * (np.exp(logp) * mass - targets) / batch

    grads = Gradients.zeros_like(state)
    if mix is None:
        acts, pre = trace
        _backprop(state, acts, pre, 0, delta, grads, input_grad=False)
    else:
        acts_a, pre_a, acts_b, pre_b, acts_t, pre_t, lam = trace
        dh = _backprop(state, acts_t, pre_t, mix.layer, delta, grads, input_grad=mix.layer > 0)
        if mix.layer > 0:
            _backprop(state, acts_a, pre_a, 0, lam * dh, grads, input_grad=False)
            _backprop(state, acts_b, pre_b, 0, (1.0 - lam) * dh, grads, input_grad=False)
    return grads, loss


def backward_samples(state: ModelState, batch: Sequence[Tuple[np.ndarray, SoftLabel, float]]) -> Tuple[Gradients, float]:
    """backward() over (features, SoftLabel, weight) triples"""
    if not batch:
        raise DimensionError("Batch must be nonempty", 'batch', 0, 'EMPTY_BATCH')
    inputs = np.stack([np.asarray(f, dtype=np.float64).ravel() for f, _, _ in batch])
    targets = np.stack([t.probs if isinstance(t, SoftLabel) else np.asarray(t) for _, t, _ in batch])
    weights = np.asarray([w for _, _, w in batch], dtype=np.float64)
    return backward(state, inputs, targets, weights)


def sgd_step(state: ModelState, grads: Gradients, optim: OptimSpec, epoch: int) -> ModelState:
    """v <- momentum * v + (grad + weight_decay * param); param <- param - lr(epoch) * v"""
    lr = optim.lr_at(epoch)

    def _update(params, gradients, velocities):
        new_params, new_velocities = [], []
        for p, g, v in zip(params, gradients, velocities):
            if g.shape != p.shape:
                raise DimensionError(
                    f"Gradient shape {g.shape} does not match parameter {p.shape}", 'gradients', g.shape,
                    'SHAPE_MISMATCH'
                )
            v = optim.momentum * v + (g + optim.weight_decay * p)
            new_params.append(p - lr * v)
            new_velocities.append(v)
        return new_params, new_velocities

    if len(grads.weights) != state.num_layers or len(grads.biases) != state.num_layers:
        raise DimensionError("Gradient layer count does not match model", 'gradients', len(grads.weights),
                             'SHAPE_MISMATCH')
    weights, velocity_w = _update(state.weights, grads.weights, state.velocity_w)
    biases, velocity_b = _update(state.biases, grads.biases, state.velocity_b)
    updated = ModelState(weights, biases, state.activation, velocity_w, velocity_b)
    if not updated.is_finite():
        raise TrainingFault("Non-finite parameters after SGD step", epoch=epoch)
    return updated


def save_state(state: ModelState, path: str) -> None:
    header = struct.pack('<4sIII', MAGIC, FORMAT_VERSION, state.num_layers, ACTIVATION_CODES[state.activation])
    dims = b''.join(struct.pack('<II', *w.shape) for w in state.weights)
    body = b''.join(
        np.ascontiguousarray(w, dtype='<f8').tobytes() + np.ascontiguousarray(b, dtype='<f8').tobytes()
        for w, b in zip(state.weights, state.biases)
    )
    with open(path, 'wb') as handle:
        handle.write(header + dims + body)
    logger.info(f"Saved {state.num_layers}-layer model to {path}")


def load_state(path: str) -> ModelState:
    try:
        with open(path, 'rb') as handle:
            raw = handle.read()
    except OSError as e:
        raise DatasetIOError(f"Cannot read model file {path}: {e}", path)

    header_size = struct.calcsize('<4sIII')
    if len(raw) < header_size:
        raise DataFormatError("Model file shorter than its header", len(raw), path)
    magic, version, layers, act_code = struct.unpack_from('<4sIII', raw, 0)
    if magic != MAGIC:
        raise DataFormatError(f"Bad magic {magic!r}", 0, path)
    if version != FORMAT_VERSION:
        raise DataFormatError(f"Unsupported model format version {version}", 4, path)
    codes = {code: act for act, code in ACTIVATION_CODES.items()}
    if act_code not in codes:
        raise DataFormatError(f"Unknown activation code {act_code}", 12, path)

    offset = header_size
    shapes = []
    for _ in range(layers):
        if offset + 8 > len(raw):
            raise DataFormatError("Truncated layer dimensions", offset, path)
        shapes.append(struct.unpack_from('<II', raw, offset))
        offset += 8

    weights, biases = [], []
    for rows, cols in shapes:
        size = 8 * (rows * cols + cols)
        if offset + size > len(raw):
            raise DataFormatError("Truncated parameter block", offset, path)
        block = np.frombuffer(raw, dtype='<f8', count=rows * cols + cols, offset=offset).astype(np.float64)
        weights.append(block[:rows * cols].reshape(rows, cols))
        biases.append(block[rows * cols:].copy())
        offset += size
    if offset != len(raw):
        raise DataFormatError("Trailing bytes after parameters", offset, path)
    return ModelState(weights, biases, codes[act_code])
