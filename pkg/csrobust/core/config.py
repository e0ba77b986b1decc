"""
Configuration Manager for csrobust experiments

Supports loading configuration from:
1. JSON or YAML files (JSON is parsed by the YAML loader)
2. Environment variables
3. Python dictionary
"""

import copy
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from csrobust.core.errors import ConfigError, MissingInputError

KNOWN_METHODS = ("zero_filled", "l1", "decoder", "cnn")
TRANSFORM_KINDS = ("wavelet-haar", "wavelet-db4", "dct", "fourier")
PHANTOM_FAMILIES = ("ellipses", "textured", "smooth", "shepp_logan")


class ConfigManager:
    """Manages experiment configuration from multiple sources."""

    # Sections a config file states in full rather than patching the defaults.
    REPLACED_KEYS = {("data", "domains"), ("filter", "overrides")}

    DEFAULT_CONFIG = {
        'run': {
            'seed': 0,
            'jobs': 1,
            'out_dir': 'runs/default',
        },
        'data': {
            'size': 64,
            'n_coils': 4,
            'snr_db': None,
            'n_images': 10,
            'sparsity_basis': None,
            'sparsity_fraction': None,
            'domains': {
                'smooth': {'families': {'smooth': 1.0}},
                'textured': {'families': {'textured': 1.0}},
            },
            'manifest': '',
            'volume': '',
            'filtered': '',
            'image_index': 0,
        },
        'mask': {
            'acceleration': 4.0,
            'center_fraction': 0.08,
            'pattern': 'equispaced',
            'seed': 0,
        },
        'methods': ['zero_filled', 'l1', 'decoder', 'cnn'],
        'l1': {
            'lam': 1e-4,
            'transform': {'kind': 'wavelet-haar', 'levels': 4},
            'max_iters': 200,
            'tolerance': 1e-7,
        },
        'decoder': {
            'architecture': 'conv_decoder',
            'layers': 5,
            'channels': 64,
            'kernel_size': 3,
            'upsample': 'nearest',
            'optimizer': 'adam',
            'lr': 0.01,
            'lr_end': 0.05,
            'beta1': 0.9,
            'beta2': 0.999,
            'iterations': 1000,
        },
        'cnn': {
            'depth': 3,
            'width': 8,
            'epochs': 50,
            'lr': 1e-3,
            'batch_size': 4,
            'weights': '',
            'train_manifest': '',
        },
        'recon': {
            'method': 'zero_filled',
        },
        'attack': {
            'epsilons': [0.0, 0.01, 0.02, 0.04, 0.08],
            'n_images': 10,
            'pgd': {
                'iterations': 20,
                'init_scale': 0.5,
            },
            'joint': {
                'beta': None,
                'betas': [1e-2, 1e-1, 1.0, 10.0],
                'outer_iterations': 100,
                'x_step': None,
                'z_step': 0.25,
                'block_size': 1,
                'x_update': 'subgradient',
            },
        },
        'shift': {
            'domain_a': '',
            'domain_b': '',
            'metric': 'ssim',
            'tune_fraction': 0.5,
            'variants': [
                {'method': 'l1', 'label': 'l1-haar', 'params': {'transform': {'kind': 'wavelet-haar', 'levels': 4}},
                 'grid': {'lam': [1e-4, 1e-3, 1e-2]}},
                {'method': 'l1', 'label': 'l1-dct', 'params': {'transform': {'kind': 'dct', 'levels': 1}},
                 'grid': {'lam': [1e-4, 1e-3, 1e-2]}},
                {'method': 'l1', 'label': 'l1-fourier', 'params': {'transform': {'kind': 'fourier', 'levels': 1}},
                 'grid': {'lam': [1e-4, 1e-3, 1e-2]}},
            ],
        },
        'filter': {
            'fraction': 0.10,
            'method': 'cnn',
            'overrides': {'width': 12},
            'seed': 1009,
            'evaluate': ['l1', 'cnn'],
            'allow_evaluated': False,
        },
        'probe': {
            'window': 3,
            'stride': 8,
            'locations': 'grid',
            'points': [],
            'n_random': 8,
            'sizes': [2, 3, 4, 5],
            'n_random_locations': 4,
        },
        'spectrum': {
            'center_fraction': 0.08,
        },
        'metrics': {
            'ssim_window': 7,
            'resamples': 1000,
            'level': 0.95,
        },
    }

    def __init__(self, config_path: Optional[str] = None, config_dict: Optional[Dict] = None):
        """
        Initialize configuration manager.

        Args:
            config_path: Path to JSON/YAML experiment config
            config_dict: Dictionary with config values
        """
        # Deep copy avoids cross-instance mutation of nested dictionaries.
        self.config = copy.deepcopy(self.DEFAULT_CONFIG)
        self.source: Optional[str] = None

        if config_path:
            self.load_from_file(config_path)

        if config_dict:
            self.load_from_dict(config_dict)

        self.load_from_env()

    def load_from_file(self, config_path: str) -> None:
        """Load configuration from a JSON or YAML file."""
        path = Path(config_path)
        if not path.exists():
            raise MissingInputError(f"Config file not found: {config_path}")

        with open(path, 'r', encoding='utf-8') as f:
            try:
                loaded = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"Config file {config_path} does not parse: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {config_path} must hold a mapping at top level")
        self._merge_config(loaded)
        self.source = str(path)

    def load_from_dict(self, config_dict: Dict[str, Any]) -> None:
        """Load configuration from dictionary."""
        self._merge_config(config_dict)

    def load_from_env(self) -> None:
        """Load configuration from environment variables."""
        env_mapping = {
            'CSROBUST_SEED': ('run', 'seed'),
            'CSROBUST_JOBS': ('run', 'jobs'),
            'CSROBUST_OUT_DIR': ('run', 'out_dir'),
            'CSROBUST_MANIFEST': ('data', 'manifest'),
            'CSROBUST_VOLUME': ('data', 'volume'),
            'CSROBUST_SIZE': ('data', 'size'),
            'CSROBUST_N_COILS': ('data', 'n_coils'),
            'CSROBUST_ACCELERATION': ('mask', 'acceleration'),
            'CSROBUST_CENTER_FRACTION': ('mask', 'center_fraction'),
            'CSROBUST_L1_LAM': ('l1', 'lam'),
            'CSROBUST_DECODER_ITERATIONS': ('decoder', 'iterations'),
            'CSROBUST_CNN_EPOCHS': ('cnn', 'epochs'),
            'CSROBUST_CNN_WEIGHTS': ('cnn', 'weights'),
            'CSROBUST_ALLOW_EVALUATED': ('filter', 'allow_evaluated'),
        }

        int_keys = {'seed', 'jobs', 'size', 'n_coils', 'iterations', 'epochs'}
        float_keys = {'acceleration', 'center_fraction', 'lam'}
        bool_keys = {'allow_evaluated'}

        for env_var, (section, key) in env_mapping.items():
            value: Any = os.getenv(env_var)
            if value is None:
                continue
            try:
                if key in bool_keys:
                    value = self._to_bool(value)
                elif key in int_keys:
                    value = int(value)
                elif key in float_keys:
                    value = float(value)
            except ValueError as exc:
                raise ConfigError(f"Environment variable {env_var}={value!r} is not numeric") from exc
            self.config[section][key] = value

    @staticmethod
    def _to_bool(value: Any) -> bool:
        """Convert common string/int representations to bool."""
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in {'1', 'true', 'yes', 'on'}

    def _merge_config(
        self, new_config: Dict[str, Any], base: Optional[Dict[str, Any]] = None, path: tuple = ()
    ) -> None:
        """Recursively merge new config into existing config; REPLACED_KEYS are taken as given."""
        target = self.config if base is None else base

        for key, value in new_config.items():
            where = path + (key,)
            if isinstance(value, dict) and isinstance(target.get(key), dict) and where not in self.REPLACED_KEYS:
                self._merge_config(value, base=target[key], path=where)
                continue
            target[key] = copy.deepcopy(value)

    def get(self, section: str, key: str, default: Any = None) -> Any:
        """Get a configuration value."""
        block = self.config.get(section, {})
        if not isinstance(block, dict):
            return default
        return block.get(key, default)

    def set(self, section: str, key: str, value: Any) -> None:
        """Set a configuration value."""
        if section not in self.config or not isinstance(self.config[section], dict):
            self.config[section] = {}
        self.config[section][key] = value

    def section(self, name: str) -> Dict[str, Any]:
        """Return a deep copy of one section."""
        return copy.deepcopy(self.config.get(name, {}))

    def as_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.config)

    @property
    def SEED(self) -> int:
        return int(self.get('run', 'seed', 0))

    @property
    def JOBS(self) -> int:
        return int(self.get('run', 'jobs', 1))

    @property
    def OUT_DIR(self) -> str:
        return str(self.get('run', 'out_dir', 'runs/default'))

    @property
    def MANIFEST(self) -> str:
        return str(self.get('data', 'manifest', '') or '')

    @property
    def METHODS(self) -> List[str]:
        return list(self.config.get('methods', []))

    @property
    def EPSILONS(self) -> List[float]:
        return [float(e) for e in self.get('attack', 'epsilons', [])]

    def validate(self) -> bool:
        """Validate the schema before any compute; raise ConfigError naming the key."""
        def require(condition: bool, where: str, message: str) -> None:
            if not condition:
                raise ConfigError(f"Invalid config {where}: {message}")

        def number(section: str, key: str) -> float:
            value = self.get(section, key)
            require(
                isinstance(value, (int, float)) and not isinstance(value, bool),
                f"{section}.{key}",
                f"expected a number, got {value!r}",
            )
            return float(value)

        require(isinstance(self.get('run', 'seed'), int), 'run.seed', 'explicit integer seed required')
        require(number('run', 'jobs') >= 1, 'run.jobs', 'must be >= 1')

        size = int(number('data', 'size'))
        require(size >= 2 and size & (size - 1) == 0, 'data.size', 'must be a power of two')
        require(number('data', 'n_coils') >= 1, 'data.n_coils', 'must be >= 1')
        snr_db = self.get('data', 'snr_db')
        require(
            snr_db is None or isinstance(snr_db, (int, float)),
            'data.snr_db',
            'must be null (noiseless) or a number',
        )
        domains = self.get('data', 'domains') or {}
        require(isinstance(domains, dict) and bool(domains), 'data.domains', 'must be a non-empty mapping')
        for name, spec in domains.items():
            families = (spec or {}).get('families', {})
            require(bool(families), f'data.domains.{name}', 'needs at least one family')
            for family, weight in families.items():
                require(family in PHANTOM_FAMILIES, f'data.domains.{name}', f'unknown family {family!r}')
                require(float(weight) > 0, f'data.domains.{name}', 'family weights must be positive')

        require(number('mask', 'acceleration') >= 1, 'mask.acceleration', 'must be >= 1')
        center = number('mask', 'center_fraction')
        require(0 < center <= 1, 'mask.center_fraction', 'must be in (0, 1]')
        require(
            self.get('mask', 'pattern') in ('equispaced', 'random'),
            'mask.pattern',
            'must be equispaced or random',
        )
        require(isinstance(self.get('mask', 'seed'), int), 'mask.seed', 'explicit integer seed required')

        methods = self.METHODS
        require(bool(methods), 'methods', 'must list at least one method')
        for method in methods:
            require(method in KNOWN_METHODS, 'methods', f'unknown method {method!r}')

        require(number('l1', 'lam') >= 0, 'l1.lam', 'must be >= 0')
        require(number('l1', 'max_iters') >= 1, 'l1.max_iters', 'must be >= 1')
        transform = self.get('l1', 'transform') or {}
        require(transform.get('kind') in TRANSFORM_KINDS, 'l1.transform.kind', f'one of {TRANSFORM_KINDS}')

        require(number('decoder', 'layers') >= 2, 'decoder.layers', 'must be >= 2')
        require(number('decoder', 'channels') >= 1, 'decoder.channels', 'must be >= 1')
        require(number('decoder', 'iterations') >= 0, 'decoder.iterations', 'must be >= 0')
        require(
            self.get('decoder', 'optimizer') in ('adam', 'gd'),
            'decoder.optimizer',
            'must be adam or gd',
        )
        require(
            self.get('decoder', 'upsample') in ('nearest', 'bilinear'),
            'decoder.upsample',
            'must be nearest or bilinear',
        )
        require(
            self.get('decoder', 'architecture') in ('conv_decoder', 'deep_decoder'),
            'decoder.architecture',
            'must be conv_decoder or deep_decoder',
        )

        require(number('cnn', 'depth') >= 1, 'cnn.depth', 'must be >= 1')
        require(number('cnn', 'width') >= 1, 'cnn.width', 'must be >= 1')
        require(number('cnn', 'epochs') >= 0, 'cnn.epochs', 'must be >= 0')

        epsilons = self.get('attack', 'epsilons') or []
        require(bool(epsilons), 'attack.epsilons', 'must be non-empty')
        require(all(float(e) >= 0 for e in epsilons), 'attack.epsilons', 'must be >= 0')
        pgd = self.get('attack', 'pgd') or {}
        require(int(pgd.get('iterations', 0)) >= 0, 'attack.pgd.iterations', 'must be >= 0')
        joint = self.get('attack', 'joint') or {}
        require(
            joint.get('x_update', 'subgradient') in ('subgradient', 'prox'),
            'attack.joint.x_update',
            'must be subgradient or prox',
        )
        require(all(float(b) >= 0 for b in joint.get('betas', [])), 'attack.joint.betas', 'must be >= 0')

        fraction = number('filter', 'fraction')
        require(0 < fraction < 1, 'filter.fraction', 'must be in (0, 1)')
        require(self.get('filter', 'method') in KNOWN_METHODS, 'filter.method', 'unknown method')

        require(0 < number('shift', 'tune_fraction') < 1, 'shift.tune_fraction', 'must be in (0, 1)')
        require(self.get('shift', 'metric') in ('ssim', 'psnr', 'nmse'), 'shift.metric', 'unknown metric')
        variants = self.get('shift', 'variants') or []
        require(isinstance(variants, list) and bool(variants), 'shift.variants', 'must be a non-empty list')
        labels = set()
        for variant in variants:
            require(isinstance(variant, dict), 'shift.variants', f'entries must be mappings, got {variant!r}')
            require(variant.get('method') in KNOWN_METHODS, 'shift.variants', f"unknown method in {variant!r}")
            label = variant.get('label') or variant.get('method')
            require(label not in labels, 'shift.variants', f'duplicate label {label!r}')
            labels.add(label)
            for name, values in (variant.get('grid') or {}).items():
                require(isinstance(values, list) and bool(values), 'shift.variants', f'empty grid for {name!r}')
        require(isinstance(self.get('filter', 'allow_evaluated'), bool), 'filter.allow_evaluated', 'must be a boolean')
        spectrum_center = number('spectrum', 'center_fraction')
        require(0 < spectrum_center <= 1, 'spectrum.center_fraction', 'must be in (0, 1]')

        require(number('probe', 'window') >= 1, 'probe.window', 'must be >= 1')
        require(number('probe', 'stride') >= 1, 'probe.stride', 'must be >= 1')
        require(
            self.get('probe', 'locations') in ('grid', 'list', 'random'),
            'probe.locations',
            'must be grid, list or random',
        )

        window = int(number('metrics', 'ssim_window'))
        require(window >= 1 and window % 2 == 1, 'metrics.ssim_window', 'must be odd')
        require(0 < number('metrics', 'level') < 1, 'metrics.level', 'must be in (0, 1)')
        return True

    def __repr__(self) -> str:
        return f"ConfigManager(source={self.source!r}, {self.config})"
