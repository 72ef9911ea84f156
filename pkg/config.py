"""
Configuration Management for the Remix imbalance lab
Environment-driven defaults for mixing, optimisation, datasets and logging
"""

import os
from typing import Dict, List, Tuple


def _env_float(name: str, default: float) -> float:
    return float(os.environ.get(name) or default)


def _env_int(name: str, default: int) -> int:
    return int(os.environ.get(name) or default)


def _env_tuple(name: str, default: str, cast=float) -> Tuple:
    raw = os.environ.get(name) or default
    return tuple(cast(part) for part in raw.split(',') if part.strip())


class BaseConfig:
    """Base configuration shared by every environment"""

    # Environment Configuration
    ENV = os.environ.get('REMIX_ENV', 'development')

    # Application Metadata
    APP_NAME = "Remix Imbalance Lab"
    APP_VERSION = "1.0"
    APP_DESCRIPTION = "Mixing regularizers for class-imbalanced classification"

    # Logging Configuration
    LOG_LEVEL = os.environ.get('LOG_LEVEL') or 'INFO'
    LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
    LOG_FILE = os.environ.get('LOG_FILE') or 'train.log'
    LOG_MAX_BYTES = 10240000
    LOG_BACKUP_COUNT = 3

    # Mixing defaults (tau / kappa shared by every remix variant)
    ALPHA = _env_float('REMIX_ALPHA', 1.0)
    TAU = _env_float('REMIX_TAU', 0.5)
    KAPPA = _env_float('REMIX_KAPPA', 3.0)
    PER_PAIR_LAMBDA = os.environ.get('REMIX_PER_PAIR_LAMBDA', 'False').lower() == 'true'

    # Optimiser defaults
    LEARNING_RATE = _env_float('REMIX_LR', 0.05)
    MOMENTUM = _env_float('REMIX_MOMENTUM', 0.9)
    WEIGHT_DECAY = _env_float('REMIX_WEIGHT_DECAY', 2e-4)
    MILESTONES = os.environ.get('REMIX_MILESTONES') or '100:0.1,150:0.1'
    EPOCHS = _env_int('REMIX_EPOCHS', 200)
    BATCH_SIZE = _env_int('REMIX_BATCH_SIZE', 64)

    # Model defaults
    HIDDEN_WIDTHS: Tuple[int, ...] = _env_tuple('REMIX_HIDDEN', '64,64', int)
    ACTIVATION = os.environ.get('REMIX_ACTIVATION') or 'relu'

    # Deferred re-balancing (None means: first LR milestone)
    DEFER_MODE = os.environ.get('REMIX_DEFER') or 'none'
    DEFER_EPOCH = os.environ.get('REMIX_DEFER_EPOCH')

    # Imbalance defaults (toy experiment mirrors rho=10 step imbalance)
    IMBALANCE_KIND = os.environ.get('REMIX_IMBALANCE') or 'step'
    RHO = _env_float('REMIX_RHO', 10.0)
    MU = _env_float('REMIX_MU', 0.5)

    # Toy datasets
    DATASET = os.environ.get('REMIX_DATASET') or 'two_moons'
    N_PER_CLASS = _env_int('REMIX_N_PER_CLASS', 500)
    EVAL_PER_CLASS = _env_int('REMIX_EVAL_PER_CLASS', 500)
    NOISE_SD = _env_float('REMIX_NOISE_SD', 0.1)
    BLOB_SD = 0.4
    TOY_CLASS_NAMES: List[str] = ['class_0', 'class_1']

    # CIFAR-10 binary layout and normalisation
    CIFAR_DIR = os.environ.get('REMIX_CIFAR_DIR') or 'data/cifar-10-batches-bin'
    CIFAR_TRAIN_FILES = [f'data_batch_{i}.bin' for i in range(1, 6)]
    CIFAR_TEST_FILES = ['test_batch.bin']
    CIFAR_MEAN: Tuple[float, float, float] = (0.4914, 0.4822, 0.4465)
    CIFAR_STD: Tuple[float, float, float] = (0.2470, 0.2435, 0.2616)
    CIFAR_PAD = 4
    CIFAR_CLASS_NAMES: List[str] = [
        'airplane', 'automobile', 'bird', 'cat', 'deer',
        'dog', 'frog', 'horse', 'ship', 'truck',
    ]

    # Outputs
    OUTPUT_DIR = os.environ.get('REMIX_OUT') or 'runs/latest'
    BOUNDARY_RESOLUTION = _env_int('REMIX_RESOLUTION', 200)
    BOUNDARY_PADDING = 0.5

    # Every AUDIT_PERIOD-th optimiser step has its soft labels checked
    AUDIT_PERIOD = _env_int('REMIX_AUDIT_PERIOD', 100)

    # Sweeps
    MAX_WORKERS = _env_int('MAX_WORKERS', 1)
    DEFAULT_SWEEP_TAUS: List[float] = [round(0.1 * i, 1) for i in range(10)]
    DEFAULT_SEEDS: List[int] = [0, 1, 2, 3, 4]

    # CLI exit codes
    EXIT_CODES: Dict[str, int] = {
        'success': 0,
        'config_error': 2,
        'data_error': 3,
        'training_fault': 4,
    }


class DevelopmentConfig(BaseConfig):
    """Development configuration"""
    ENV = 'development'
    LOG_LEVEL = os.environ.get('LOG_LEVEL') or 'DEBUG'


class TestingConfig(BaseConfig):
    """Testing configuration"""
    ENV = 'testing'
    LOG_LEVEL = 'WARNING'
    EPOCHS = 5
    N_PER_CLASS = 100
    EVAL_PER_CLASS = 100
    BOUNDARY_RESOLUTION = 20


class ProductionConfig(BaseConfig):
    """Long experiment runs"""
    ENV = 'production'
    LOG_LEVEL = os.environ.get('LOG_LEVEL') or 'INFO'
    MAX_WORKERS = _env_int('MAX_WORKERS', 4)


def get_config(config_name=None):
    """Get configuration based on environment"""
    config_name = config_name or os.environ.get('REMIX_ENV', 'development')

    configs = {
        'development': DevelopmentConfig,
        'testing': TestingConfig,
        'production': ProductionConfig,
    }

    return configs.get(config_name, DevelopmentConfig)


# Export the current configuration
Config = get_config()
