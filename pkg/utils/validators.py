"""
Validation utilities and error types for the Remix imbalance lab
Plan validation with detailed, field-level error messages
"""

import logging
import math
from datetime import datetime, timezone
from functools import wraps
from typing import Any, Dict, List, Optional, Sequence, Tuple

from cerberus import Validator

from config import Config

logger = logging.getLogger(__name__)


class ValidationError(Exception):
    """Configuration or parameter problem with detailed error information"""
    exit_code = Config.EXIT_CODES['config_error']

    def __init__(self, message: str, field: str = None, value: Any = None, code: str = None, details: List = None):
        self.message = message
        self.field = field
        self.value = value
        self.code = code
        self.details = details
        super().__init__(self.message)

    def to_dict(self):
        result = {
            'error': 'validation_error',
            'message': self.message,
            'field': self.field,
            'value': str(self.value) if self.value is not None else None,
            'code': self.code,
            'timestamp': datetime.now(timezone.utc).isoformat()
        }
        if self.details:
            result['details'] = self.details
        return result


class ParameterError(ValidationError, ValueError):
    """A numeric parameter is outside its valid range"""


class DimensionError(ValidationError, ValueError):
    """Array shapes do not agree"""


class ClassIndexError(ValidationError, IndexError):
    """A class index is outside [0, C)"""


class DataError(Exception):
    """Dataset cannot be built or read"""
    exit_code = Config.EXIT_CODES['data_error']

    def __init__(self, message: str, details: Dict = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self):
        return {
            'error': 'data_error',
            'message': self.message,
            'details': self.details,
            'timestamp': datetime.now(timezone.utc).isoformat()
        }


class DataFormatError(DataError):
    """Malformed bytes in a dataset file"""

    def __init__(self, message: str, offset: int, path: str = None):
        self.offset = offset
        self.path = path
        super().__init__(f"{message} (byte offset {offset})", {'offset': offset, 'path': path})


class DatasetIOError(DataError, OSError):
    """Dataset file missing or unreadable"""

    def __init__(self, message: str, path: str = None):
        self.path = path
        super().__init__(message, {'path': path})


class TrainingFault(Exception):
    """Training diverged or a module failed mid-run"""
    exit_code = Config.EXIT_CODES['training_fault']

    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None, details: Dict = None):
        self.epoch = epoch
        self.batch = batch
        self.details = details or {}
        context = []
        if epoch is not None:
            context.append(f"epoch {epoch}")
        if batch is not None:
            context.append(f"batch {batch}")
        self.message = f"{message} ({', '.join(context)})" if context else message
        super().__init__(self.message)

    def to_dict(self):
        return {
            'error': 'training_fault',
            'message': self.message,
            'epoch': self.epoch,
            'batch': self.batch,
            'details': self.details,
            'timestamp': datetime.now(timezone.utc).isoformat()
        }


def require(condition: bool, message: str, field: str = None, value: Any = None,
            code: str = 'OUT_OF_RANGE') -> None:
    """Raise ParameterError unless condition holds"""
    if not condition:
        raise ParameterError(message, field, value, code)


METHODS = ['erm', 'mixup', 'remix', 'cutmix', 'remix_cutmix', 'manifold_mixup', 'remix_manifold']
DATASETS = ['two_moons', 'two_circles', 'two_blobs', 'cifar10']


def _is_finite(field, value, error):
    if isinstance(value, (int, float)) and not math.isfinite(value):
        error(field, "must be finite")


PLAN_SCHEMA = {
    'dataset': {'type': 'string', 'allowed': DATASETS, 'required': True},
    'imbalance': {'type': 'string', 'allowed': ['longtail', 'step'], 'required': True},
    'rho': {'type': 'number', 'min': 1.0, 'check_with': _is_finite, 'required': True},
    'mu': {'type': 'number', 'min': 0.0, 'max': 1.0, 'check_with': _is_finite, 'required': True},
    'method': {'type': 'string', 'allowed': METHODS, 'required': True},
    'alpha': {'type': 'number', 'check_with': _is_finite, 'required': True},
    'tau': {'type': 'number', 'min': 0.0, 'max': 1.0, 'required': True},
    'kappa': {'type': 'number', 'min': 1.0, 'check_with': _is_finite, 'required': True},
    'epochs': {'type': 'integer', 'min': 1, 'required': True},
    'batch_size': {'type': 'integer', 'min': 1, 'required': True},
    'lr': {'type': 'number', 'check_with': _is_finite, 'required': True},
    'momentum': {'type': 'number', 'min': 0.0, 'max': 1.0, 'required': True},
    'weight_decay': {'type': 'number', 'min': 0.0, 'check_with': _is_finite, 'required': True},
    'milestones': {'type': 'string', 'required': True},
    'defer': {'type': 'string', 'allowed': ['none', 'drw', 'drs'], 'required': True},
    'defer_epoch': {'type': 'integer', 'min': 0, 'nullable': True},
    'seed': {'type': 'integer', 'min': 0, 'required': True},
    'out': {'type': 'string', 'nullable': True},
    'hidden': {'type': 'string', 'regex': r'^\s*\d+(\s*,\s*\d+)*\s*$', 'required': True},
    'activation': {'type': 'string', 'allowed': ['relu', 'tanh'], 'required': True},
    'per_pair_lambda': {'type': 'boolean'},
    'data_path': {'type': 'string', 'nullable': True},
    'n_per_class': {'type': 'integer', 'min': 1},
    'eval_per_class': {'type': 'integer', 'min': 1},
    'noise': {'type': 'number', 'min': 0.0, 'check_with': _is_finite},
    'augment': {'type': 'boolean', 'nullable': True},
    'resolution': {'type': 'integer', 'min': 2},
}


class PlanValidator:
    """Validates raw training options before a TrainPlan is built"""

    def __init__(self, schema: Dict = None):
        self.validator = Validator(schema or PLAN_SCHEMA, allow_unknown=False)

    def validate(self, options: Dict) -> Dict:
        """Return normalized options or raise ValidationError with per-field details"""
        if not self.validator.validate(options):
            details = [
                {'field': field, 'errors': [str(e) for e in errors]}
                for field, errors in sorted(self.validator.errors.items())
            ]
            fields = ', '.join(d['field'] for d in details)
            raise ValidationError(f"Invalid training options: {fields}", code='INVALID_PLAN', details=details)

        document = self.validator.document
        if document['alpha'] <= 0:
            raise ValidationError("alpha must be positive", 'alpha', document['alpha'], 'OUT_OF_RANGE')
        if document['lr'] <= 0:
            raise ValidationError("learning rate must be positive", 'lr', document['lr'], 'OUT_OF_RANGE')
        if document['imbalance'] == 'step' and not 0.0 < document['mu'] < 1.0:
            raise ValidationError("mu must lie strictly between 0 and 1", 'mu', document['mu'], 'OUT_OF_RANGE')
        if document['momentum'] >= 1.0:
            raise ValidationError("momentum must be below 1", 'momentum', document['momentum'], 'OUT_OF_RANGE')
        return document


def parse_milestones(text: str) -> List[Tuple[int, float]]:
    """Parse the "e1:m1,e2:m2" milestone syntax"""
    milestones = []
    if text is None or not text.strip():
        return milestones
    for part in text.split(','):
        try:
            epoch, multiplier = part.split(':')
            milestones.append((int(epoch), float(multiplier)))
        except ValueError:
            raise ValidationError(
                f"Invalid milestone '{part.strip()}'. Expected epoch:multiplier",
                'milestones', text, 'INVALID_MILESTONE'
            )
    return milestones


def parse_widths(text: str) -> Tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in text.split(',') if w.strip())
    except ValueError:
        raise ValidationError(f"Invalid layer widths '{text}'", 'hidden', text, 'INVALID_WIDTHS')
    if not widths or any(w < 1 for w in widths):
        raise ValidationError("At least one positive hidden width is required", 'hidden', text, 'INVALID_WIDTHS')
    return widths


def parse_values(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ValidationError(f"Invalid value list '{text}'", 'values', text, 'INVALID_NUMBER')


def check_shapes(a_shape: Sequence[int], b_shape: Sequence[int], what: str = 'features') -> None:
    if tuple(a_shape) != tuple(b_shape):
        raise DimensionError(
            f"Shape mismatch for {what}: {tuple(a_shape)} vs {tuple(b_shape)}",
            what, (tuple(a_shape), tuple(b_shape)), 'SHAPE_MISMATCH'
        )


def handle_cli_errors(f):
    """Decorator mapping error families to process exit codes"""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except ValidationError as e:
            logger.error(f"Configuration error in {f.__name__}: {e.message}")
            for detail in e.details or []:
                logger.error(f"  {detail}")
            raise SystemExit(e.exit_code)
        except DataError as e:
            logger.error(f"Data error in {f.__name__}: {e.message}")
            raise SystemExit(e.exit_code)
        except TrainingFault as e:
            logger.error(f"Training fault in {f.__name__}: {e.message}")
            raise SystemExit(e.exit_code)

    return decorated_function


# Export validation utilities
__all__ = [
    'ValidationError',
    'ParameterError',
    'DimensionError',
    'ClassIndexError',
    'DataError',
    'DataFormatError',
    'DatasetIOError',
    'TrainingFault',
    'PlanValidator',
    'parse_milestones',
    'parse_widths',
    'parse_values',
    'check_shapes',
    'require',
    'handle_cli_errors',
]
