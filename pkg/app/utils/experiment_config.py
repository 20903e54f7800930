import json
import os
from dataclasses import dataclass, field, replace

from app.errors import ConfigError
from app.services.defect_engine import DEFECT_KINDS, STUCK_MODES
from app.services.neural import TrainConfig
from app.utils.ladder import get_ladder, resolve_architecture

CONFIG_VERSION = 1
EXPERIMENT_KINDS = ('same_defect', 'cross_defect', 'layer_sweep', 'ladder')
MIXED = 'mixed'
SEED_NAMES = ('base', 'corpus', 'corrector')

DEFAULT_BASELINE_TRAIN = {'learning_rate': 0.002, 'epochs': 300, 'batch_size': 32, 'patience': 25}
DEFAULT_CORRECTOR_TRAIN = {'learning_rate': 0.003, 'epochs': 150, 'batch_size': 64, 'patience': 15}
# circle-family transfer grid plus the same-kind diagonal for the remaining kinds
DEFAULT_PAIRINGS = ([[a, b] for a in ('circle', 'ring', 'circle_complement')
                     for b in ('circle', 'ring', 'circle_complement')]
                    + [[kind, kind] for kind in ('row', 'column', 'checkerboard')])


@dataclass
class ExperimentConfig:
    experiment: str = 'same_defect'
    train_defect: str = None
    test_defect: str = None
    corrector: str = 'MLP(10,10)'
    architectures: list = field(default_factory=get_ladder)
    pairings: list = field(default_factory=lambda: [list(p) for p in DEFAULT_PAIRINGS])
    stuck_mode: str = 'stuck_off'
    seeds: dict = field(default_factory=lambda: {name: 0 for name in SEED_NAMES})
    output_dir: str = 'runs/default'
    digits_path: str = None
    workers: int = 1
    baseline_min_accuracy: float = 0.947
    baseline_restarts: int = 4
    baseline_layer_screen: bool = False
    baseline_train: dict = field(default_factory=lambda: dict(DEFAULT_BASELINE_TRAIN))
    train: dict = field(default_factory=lambda: dict(DEFAULT_CORRECTOR_TRAIN))

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment '{self.experiment}'")
        if self.train_defect is not None and self.train_defect not in DEFECT_KINDS + (MIXED,):
            raise ConfigError(f"unknown train defect '{self.train_defect}'")
        if self.test_defect is not None and self.test_defect not in DEFECT_KINDS:
            raise ConfigError(f"unknown test defect '{self.test_defect}'")
        if self.stuck_mode not in STUCK_MODES:
            raise ConfigError(f"unknown stuck mode '{self.stuck_mode}'")
        resolve_architecture(self.corrector)
        for name in self.architectures:
            resolve_architecture(name)
        for pairing in self.pairings:
            if len(pairing) != 2 or any(kind not in DEFECT_KINDS for kind in pairing):
                raise ConfigError(f"invalid defect pairing {pairing}")
        unknown_seeds = set(self.seeds) - set(SEED_NAMES)
        if unknown_seeds:
            raise ConfigError(f"unknown seeds {sorted(unknown_seeds)}")
        self.seeds = {name: int(self.seeds.get(name, 0)) for name in SEED_NAMES}
        # fail early on bad training options
        self.corrector_train_config()
        self.baseline_train_config()

    def corrector_train_config(self, **overrides):
        return TrainConfig.from_dict(self.train, **{'rng_seed': self.seeds['corrector'], **overrides})

    def baseline_train_config(self):
        return TrainConfig.from_dict(self.baseline_train, rng_seed=self.seeds['base'])

    def with_seed(self, seed):
        return replace(self, seeds={name: int(seed) for name in SEED_NAMES})

    @property
    def baseline_path(self):
        return os.path.join(self.output_dir, 'baseline.json')

    @property
    def arrays_dir(self):
        return os.path.join(self.output_dir, 'arrays')

    @property
    def corpus_dir(self):
        return os.path.join(self.output_dir, 'corpus')

    @property
    def reports_dir(self):
        return os.path.join(self.output_dir, 'reports')

    def to_dict(self):
        return {
            'version': CONFIG_VERSION,
            'experiment': self.experiment,
            'train_defect': self.train_defect,
            'test_defect': self.test_defect,
            'corrector': self.corrector,
            'architectures': list(self.architectures),
            'pairings': [list(p) for p in self.pairings],
            'stuck_mode': self.stuck_mode,
            'seeds': dict(self.seeds),
            'output_dir': self.output_dir,
            'digits_path': self.digits_path,
            'workers': self.workers,
            'baseline': {'min_accuracy': self.baseline_min_accuracy, 'restarts': self.baseline_restarts,
                         'layer_screen': self.baseline_layer_screen, 'train': dict(self.baseline_train)},
            'train': dict(self.train),
        }


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a JSON object")
    data = dict(data)
    version = data.pop('version', CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    baseline = data.pop('baseline', {}) or {}
    unknown_baseline = set(baseline) - {'min_accuracy', 'restarts', 'layer_screen', 'train'}
    if unknown_baseline:
        raise ConfigError(f"unknown baseline options {sorted(unknown_baseline)}")
    kwargs = {}
    if 'min_accuracy' in baseline:
        kwargs['baseline_min_accuracy'] = float(baseline['min_accuracy'])
    if 'restarts' in baseline:
        kwargs['baseline_restarts'] = int(baseline['restarts'])
    if 'layer_screen' in baseline:
        kwargs['baseline_layer_screen'] = bool(baseline['layer_screen'])
    if 'train' in baseline:
        kwargs['baseline_train'] = {**DEFAULT_BASELINE_TRAIN, **baseline['train']}
    if 'train' in data:
        data['train'] = {**DEFAULT_CORRECTOR_TRAIN, **data['train']}
    unknown = set(data) - set(ExperimentConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs.update(data)
    return ExperimentConfig(**kwargs)


def load_experiment_config(path, seed=None, defaults=None):
    """Parse a JSON experiment file; ``seed`` overrides every seed, ``defaults``
    fills keys the file leaves out (e.g. paths from the app config)."""
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if defaults and isinstance(data, dict):
        data = {**{k: v for k, v in defaults.items() if v is not None}, **data}
    config = config_from_dict(data)
    if seed is not None:
        config = config.with_seed(seed)
    return config
