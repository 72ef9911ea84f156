"""
Training orchestration for the imbalance experiments
Builds the imbalanced dataset, trains on mixed samples, evaluates every epoch
and writes the run outputs
"""

import logging
import math
import os
from dataclasses import dataclass, field, replace
from logging.handlers import RotatingFileHandler
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from utils.data import (
    Dataset, augment_images, is_image_shape, load_cifar10_binary, make_toy_dataset,
)
from utils.imbalance import (
    ClassBalancedSampler, ClassProfile, DeferMode, DeferredSchedule, ImbalanceKind, ImbalanceSpec,
    TrainingPhase, build_profile, schedule_phase, subsample,
)
from utils.mixing import ClassCounts, MixedBatch, MixMethod, SoftLabel, form_pairs, make_mixed_batch
from utils.model import (
    Activation, ManifoldMix, MlpSpec, ModelState, OptimSpec, backward, forward, init_state, sgd_step,
)
from utils.validators import (
    DataError, PlanValidator, TrainingFault, ValidationError, parse_milestones, parse_widths, require,
)

logger = logging.getLogger(__name__)

CIFAR_N_MAX = 5000


@dataclass(frozen=True)
class TrainPlan:
    """Every hyperparameter of one training run"""
    method: MixMethod
    alpha: float
    tau: float
    kappa: float
    epochs: int
    batch_size: int
    optim: OptimSpec
    deferred: DeferredSchedule
    imbalance: ImbalanceSpec
    dataset: str = 'two_moons'
    seed: int = 0
    output_dir: Optional[str] = None
    hidden_widths: Tuple[int, ...] = (64, 64)
    activation: Activation = Activation.RELU
    per_pair_lambda: bool = False
    data_path: Optional[str] = None
    n_per_class: int = 500
    eval_per_class: int = 500
    noise_sd: float = 0.1
    augment: bool = False
    resolution: int = 200

    def __post_init__(self):
        object.__setattr__(self, 'method', MixMethod(self.method))
        object.__setattr__(self, 'activation', Activation(self.activation))
        require(self.alpha > 0, "alpha must be positive", 'alpha', self.alpha)
        require(0.0 <= self.tau <= 1.0, "tau must lie in [0, 1]", 'tau', self.tau)
        require(self.kappa >= 1.0, "kappa must be at least 1", 'kappa', self.kappa)
        require(self.epochs >= 1, "epochs must be at least 1", 'epochs', self.epochs)
        require(self.batch_size >= 1, "batch size must be at least 1", 'batch_size', self.batch_size)

    @classmethod
    def from_options(cls, options: Dict) -> 'TrainPlan':
        """Validate raw CLI-style options and resolve defaults"""
        document = PlanValidator().validate(options)
        milestones = parse_milestones(document['milestones'])
        defer_epoch = document.get('defer_epoch')
        if defer_epoch is None:
            # deferred phase starts at the first learning-rate decay
            defer_epoch = milestones[0][0] if milestones else 0

        dataset = document['dataset']
        n_per_class = document.get('n_per_class') or (CIFAR_N_MAX if dataset == 'cifar10' else Config.N_PER_CLASS)
        num_classes = 10 if dataset == 'cifar10' else 2
        augment = document.get('augment')
        if augment is None:
            augment = dataset == 'cifar10'

        return cls(
            method=MixMethod(document['method']),
            alpha=float(document['alpha']),
            tau=float(document['tau']),
            kappa=float(document['kappa']),
            epochs=document['epochs'],
            batch_size=document['batch_size'],
            optim=OptimSpec(
                lr=float(document['lr']),
                momentum=float(document['momentum']),
                weight_decay=float(document['weight_decay']),
                milestones=tuple(milestones),
            ),
            deferred=DeferredSchedule(defer_epoch, DeferMode(document['defer'])),
            imbalance=ImbalanceSpec(
                kind=ImbalanceKind(document['imbalance']),
                rho=float(document['rho']),
                num_classes=num_classes,
                n_max=n_per_class,
                mu=float(document['mu']),
            ),
            dataset=dataset,
            seed=document['seed'],
            output_dir=document.get('out'),
            hidden_widths=parse_widths(document['hidden']),
            activation=Activation(document['activation']),
            per_pair_lambda=bool(document.get('per_pair_lambda', False)),
            data_path=document.get('data_path'),
            n_per_class=n_per_class,
            eval_per_class=document.get('eval_per_class') or Config.EVAL_PER_CLASS,
            noise_sd=float(document.get('noise', Config.NOISE_SD)),
            augment=bool(augment),
            resolution=document.get('resolution') or Config.BOUNDARY_RESOLUTION,
        )

    def with_overrides(self, **changes) -> 'TrainPlan':
        return replace(self, **changes)

    def to_text(self) -> str:
        """Resolved configuration as key = value lines"""
        values = {
            'method': self.method.value,
            'alpha': self.alpha,
            'tau': self.tau,
            'kappa': self.kappa,
            'epochs': self.epochs,
            'batch_size': self.batch_size,
            'lr': self.optim.lr,
            'momentum': self.optim.momentum,
            'weight_decay': self.optim.weight_decay,
            'milestones': ','.join(f"{e}:{m!r}" for e, m in self.optim.milestones),
            'defer': self.deferred.mode.value,
            'defer_epoch': self.deferred.phase_boundary_epoch,
            'imbalance': self.imbalance.kind.value,
            'rho': self.imbalance.rho,
            'mu': self.imbalance.mu,
            'n_max': self.imbalance.n_max,
            'num_classes': self.imbalance.num_classes,
            'dataset': self.dataset,
            'data_path': self.data_path,
            'seed': self.seed,
            'hidden': ','.join(str(w) for w in self.hidden_widths),
            'activation': self.activation.value,
            'per_pair_lambda': self.per_pair_lambda,
            'n_per_class': self.n_per_class,
            'eval_per_class': self.eval_per_class,
            'noise_sd': self.noise_sd,
            'augment': self.augment,
            'resolution': self.resolution,
        }
        return ''.join(f"{key} = {value!r}\n" for key, value in values.items())


def default_options(**overrides) -> Dict:
    """CLI-style options filled from Config"""
    options = {
        'dataset': Config.DATASET,
        'imbalance': Config.IMBALANCE_KIND,
        'rho': Config.RHO,
        'mu': Config.MU,
        'method': 'remix',
        'alpha': Config.ALPHA,
        'tau': Config.TAU,
        'kappa': Config.KAPPA,
        'epochs': Config.EPOCHS,
        'batch_size': Config.BATCH_SIZE,
        'lr': Config.LEARNING_RATE,
        'momentum': Config.MOMENTUM,
        'weight_decay': Config.WEIGHT_DECAY,
        'milestones': Config.MILESTONES,
        'defer': Config.DEFER_MODE,
        'defer_epoch': int(Config.DEFER_EPOCH) if Config.DEFER_EPOCH else None,
        'seed': 0,
        'out': None,
        'hidden': ','.join(str(w) for w in Config.HIDDEN_WIDTHS),
        'activation': Config.ACTIVATION,
        'per_pair_lambda': Config.PER_PAIR_LAMBDA,
        'noise': Config.NOISE_SD,
    }
    options.update(overrides)
    return options


@dataclass
class EvalReport:
    """Balanced held-out evaluation after one epoch"""
    per_class_recall: np.ndarray
    top1: float
    confusion: np.ndarray
    epoch: int

    def minority_recall(self, classes: Sequence[int]) -> float:
        if not classes:
            return float('nan')
        return float(np.nanmean(self.per_class_recall[list(classes)]))


@dataclass(frozen=True)
class BoundaryRaster:
    """Predicted classes on a resolution x resolution grid; row 0 is y_max"""
    grid: np.ndarray
    bounds: Tuple[float, float, float, float]
    num_classes: int

    @property
    def resolution(self) -> int:
        return self.grid.shape[0]

    def coordinates(self) -> np.ndarray:
        return raster_points(self.bounds, self.resolution)


@dataclass
class TrainingResult:
    state: ModelState
    reports: List[EvalReport]
    profile: ClassProfile
    counts: ClassCounts
    plan: TrainPlan
    steps_per_epoch: List[int] = field(default_factory=list)
    raster: Optional[BoundaryRaster] = None

    @property
    def final_report(self) -> EvalReport:
        return self.reports[-1]

    @property
    def minority_recall(self) -> float:
        return self.final_report.minority_recall(self.counts.minority_classes())


def _seed_streams(seed: int) -> Dict[str, np.random.SeedSequence]:
    names = ['data', 'eval', 'subsample', 'init', 'train']
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def prepare_data(plan: TrainPlan) -> Tuple[Dataset, Dataset]:
    """Imbalanced training set and balanced evaluation set for the plan"""
    streams = _seed_streams(plan.seed)
    if plan.dataset == 'cifar10':
        path = plan.data_path or Config.CIFAR_DIR
        # evaluation needs the held-out test batch next to the training batches
        if os.path.isfile(path):
            raise DataError(
                f"CIFAR-10 training needs the batches directory, got a single file: {path}",
                {'data_path': path}
            )
        full = load_cifar10_binary(path, 'train')
        eval_set = load_cifar10_binary(path, 'test')
    else:
        full = make_toy_dataset(plan.dataset, plan.n_per_class, plan.noise_sd,
                                np.random.default_rng(streams['data']))
        eval_set = make_toy_dataset(plan.dataset, plan.eval_per_class, plan.noise_sd,
                                    np.random.default_rng(streams['eval']))
    if full.num_classes != plan.imbalance.num_classes:
        raise DataError(
            f"Dataset has {full.num_classes} classes, plan expects {plan.imbalance.num_classes}",
            {'dataset': plan.dataset}
        )
    target = plan.imbalance.sizes()
    train = subsample(full, target, np.random.default_rng(streams['subsample']))
    return train, eval_set


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    targets = np.zeros((labels.size, num_classes))
    targets[np.arange(labels.size), labels] = 1.0
    return targets


def predict(state: ModelState, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lower class index"""
    return np.argmax(forward(state, features), axis=-1)


def evaluate(state: ModelState, eval_set: Dataset, epoch: int = 0) -> EvalReport:
    num_classes = max(state.num_classes, eval_set.num_classes)
    predictions = predict(state, eval_set.flat_features())
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (eval_set.labels, predictions), 1)
    support = confusion.sum(axis=1)
    diagonal = np.diag(confusion).astype(np.float64)
    recall = np.full(num_classes, np.nan)
    np.divide(diagonal, support, out=recall, where=support > 0)
    total = int(support.sum())
    top1 = float(diagonal.sum() / total) if total else float('nan')
    return EvalReport(per_class_recall=recall, top1=top1, confusion=confusion, epoch=epoch)


def raster_points(bounds: Tuple[float, float, float, float], resolution: int) -> np.ndarray:
    x_min, x_max, y_min, y_max = bounds
    xs = np.linspace(x_min, x_max, resolution)
    ys = np.linspace(y_max, y_min, resolution)
    grid_x, grid_y = np.meshgrid(xs, ys)
    return np.column_stack([grid_x.ravel(), grid_y.ravel()])


def export_boundary_raster(state: ModelState, bounds: Tuple[float, float, float, float],
                           resolution: int) -> BoundaryRaster:
    """Decision-boundary raster for a model with two input features"""
    require(state.input_width == 2, "boundary rasters need a model with 2 inputs", 'input_width', state.input_width)
    require(resolution >= 1, "resolution must be positive", 'resolution', resolution)
    x_min, x_max, y_min, y_max = bounds
    require(x_min < x_max and y_min < y_max, "bounds must be increasing", 'bounds', bounds)
    grid = predict(state, raster_points(bounds, resolution)).reshape(resolution, resolution)
    return BoundaryRaster(grid=grid, bounds=tuple(float(b) for b in bounds), num_classes=state.num_classes)


def data_bounds(dataset: Dataset, padding: float = None) -> Tuple[float, float, float, float]:
    padding = Config.BOUNDARY_PADDING if padding is None else padding
    lo = dataset.features.min(axis=0) - padding
    hi = dataset.features.max(axis=0) + padding
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def _audit_targets(targets: np.ndarray, epoch: int, batch: int, mixed: Optional[MixedBatch] = None) -> None:
    """Every target row must be a SoftLabel and every factor pair a MixFactor"""
    try:
        if mixed is None:
            for row in targets:
                SoftLabel(row)
        else:
            mixed.soft_labels()
            mixed.factors()
    except ValidationError as e:
        raise TrainingFault(f"Invalid soft targets: {e.message}", epoch=epoch, batch=batch) from e


def _attach_run_log(output_dir: str) -> RotatingFileHandler:
    handler = RotatingFileHandler(
        os.path.join(output_dir, Config.LOG_FILE), maxBytes=Config.LOG_MAX_BYTES, backupCount=Config.LOG_BACKUP_COUNT
    )
    handler.setFormatter(logging.Formatter(Config.LOG_FORMAT))
    handler.setLevel(logging.INFO)
    logging.getLogger().addHandler(handler)
    return handler


def run_training(plan: TrainPlan, train: Optional[Dataset] = None,
                 eval_set: Optional[Dataset] = None) -> TrainingResult:
    """Train the plan's model on mixed samples and evaluate after every epoch.

    Outputs are written when ``plan.output_dir`` is set.
    """
    handler = None
    root = logging.getLogger()
    previous_level = root.level
    if plan.output_dir:
        os.makedirs(plan.output_dir, exist_ok=True)
        handler = _attach_run_log(plan.output_dir)
        # train.log records INFO even when the console is quieter
        if root.getEffectiveLevel() > logging.INFO:
            root.setLevel(logging.INFO)
    try:
        result = _train(plan, train, eval_set)
        if plan.output_dir:
            from utils.export import ReportGenerator
            ReportGenerator(plan.output_dir).write_run(result)
        return result
    finally:
        if handler is not None:
            root.removeHandler(handler)
            root.setLevel(previous_level)
            handler.close()


def _train(plan: TrainPlan, train: Optional[Dataset], eval_set: Optional[Dataset]) -> TrainingResult:
    if train is None or eval_set is None:
        train, eval_set = prepare_data(plan)
    streams = _seed_streams(plan.seed)
    counts = train.counts()
    profile = build_profile(counts)
    sampler = ClassBalancedSampler(train.labels, profile) if plan.deferred.mode is DeferMode.DRS else None

    init_seed = int(streams['init'].generate_state(1)[0])
    spec = MlpSpec((train.input_width,) + tuple(plan.hidden_widths) + (train.num_classes,), plan.activation, init_seed)
    state = init_state(spec)
    rng = np.random.default_rng(streams['train'])
    augment = plan.augment and is_image_shape(train.feature_shape)

    size = len(train)
    steps = math.ceil(size / plan.batch_size)
    logger.info(
        f"Training {plan.method.value} on {plan.dataset}: {size} samples, counts {counts.counts}, "
        f"{steps} steps/epoch, defer={plan.deferred.mode.value}@{plan.deferred.phase_boundary_epoch}"
    )

    reports: List[EvalReport] = []
    steps_per_epoch: List[int] = []
    global_step = 0
    for epoch in range(plan.epochs):
        deferred = schedule_phase(epoch, plan.deferred) is TrainingPhase.DEFERRED_PHASE
        resample = deferred and plan.deferred.mode is DeferMode.DRS
        reweight = deferred and plan.deferred.mode is DeferMode.DRW
        order = sampler.draw(size, rng) if resample else rng.permutation(size)

        losses = []
        for batch in range(steps):
            idx = order[batch * plan.batch_size:(batch + 1) * plan.batch_size]
            x = train.features[idx]
            y = train.labels[idx]
            try:
                if augment:
                    x = augment_images(x, rng)
                mix = None
                mixed = None
                if plan.method.mixes:
                    partner = form_pairs(idx.size, rng)
                    mixed = make_mixed_batch(x, y, x[partner], y[partner], plan.method, counts, plan, rng,
                                             eligible_layers=spec.num_layers)
                    inputs, targets = mixed.inputs, mixed.targets
                    if mixed.is_manifold:
                        mix = ManifoldMix(mixed.partner_inputs, mixed.lambda_x, mixed.layer)
                else:
                    inputs, targets = x, one_hot(y, train.num_classes)
                if global_step % Config.AUDIT_PERIOD == 0:
                    _audit_targets(targets, epoch, batch, mixed)
                weights = targets @ profile.weights if reweight else None
                grads, loss = backward(state, inputs, targets, weights, mix)
            except ValidationError as e:
                raise TrainingFault(e.message, epoch=epoch, batch=batch) from e
            if not np.isfinite(loss):
                raise TrainingFault(f"Non-finite loss {loss}", epoch=epoch, batch=batch)
            try:
                state = sgd_step(state, grads, plan.optim, epoch)
            except TrainingFault as e:
                raise TrainingFault("Non-finite parameters after SGD step", epoch=epoch, batch=batch) from e
            losses.append(loss)
            global_step += 1

        steps_per_epoch.append(len(losses))
        report = evaluate(state, eval_set, epoch)
        reports.append(report)
        logger.info(
            f"epoch {epoch} lr={plan.optim.lr_at(epoch):.5g} loss={np.mean(losses):.5f} "
            f"top1={report.top1:.4f} phase={'deferred' if deferred else 'erm'}"
        )

    raster = None
    if train.input_width == 2 and len(train.feature_shape) == 1:
        raster = export_boundary_raster(state, data_bounds(eval_set), plan.resolution)

    return TrainingResult(state=state, reports=reports, profile=profile, counts=counts, plan=plan,
                          steps_per_epoch=steps_per_epoch, raster=raster)
