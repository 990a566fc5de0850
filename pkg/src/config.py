"""
Configuration management for catlab.

Environment-level settings come from the process environment (optionally
seeded from a .env file). Per-command experiment settings come from a JSON
config document and are validated strictly: unknown keys are rejected.
"""
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Type, TypeVar, Union, get_args, get_origin, get_type_hints

from dotenv import load_dotenv

from src.core.errors import InvalidConfig

# Load environment variables from .env file
load_dotenv()

# Reproducibility and execution
CATLAB_SEED = os.getenv('CATLAB_SEED') or None
CATLAB_JOBS = int(os.getenv('CATLAB_JOBS', '1'))
CATLAB_OUTPUT_DIR = os.getenv('CATLAB_OUTPUT_DIR', 'runs')
CATLAB_LOG_LEVEL = os.getenv('CATLAB_LOG_LEVEL', 'INFO')

# Numerical tolerances
NORM_EPS = float(os.getenv('CATLAB_NORM_EPS', '1e-12'))
GS_TOL = float(os.getenv('CATLAB_GS_TOL', '1e-9'))
TIE_TOL = float(os.getenv('CATLAB_TIE_TOL', '1e-12'))

# Signature enumeration guards
SIGNATURE_ENUM_LIMIT = int(os.getenv('CATLAB_SIGNATURE_ENUM_LIMIT', '1000000'))
SIGNATURE_SAMPLES = int(os.getenv('CATLAB_SIGNATURE_SAMPLES', '100000'))

# Synthetic task defaults
DEFAULT_VOCAB_SIZE = int(os.getenv('CATLAB_VOCAB_SIZE', '8092'))

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


def get_seed(config_seed: int) -> int:
    """
    Resolve the effective seed.

    Args:
        config_seed: Seed from the experiment config document

    Returns:
        The CATLAB_SEED environment override when set, otherwise config_seed
    """
    override = os.getenv('CATLAB_SEED')
    if override is not None and override.strip() != '':
        return int(override)
    return config_seed


def validate_config():
    """Validate that environment configuration values are in range."""
    problems = []

    if CATLAB_SEED is not None and not CATLAB_SEED.strip().lstrip('-').isdigit():
        problems.append(f'CATLAB_SEED must be an integer (got {CATLAB_SEED!r})')
    if CATLAB_JOBS < 1:
        problems.append(f'CATLAB_JOBS must be >= 1 (got {CATLAB_JOBS})')
    if CATLAB_LOG_LEVEL.upper() not in LOG_LEVELS:
        problems.append(f'CATLAB_LOG_LEVEL must be one of {", ".join(LOG_LEVELS)}')
    for name, value in (('CATLAB_NORM_EPS', NORM_EPS),
                        ('CATLAB_GS_TOL', GS_TOL), ('CATLAB_TIE_TOL', TIE_TOL)):
        if not value > 0:
            problems.append(f'{name} must be positive (got {value})')
    if SIGNATURE_ENUM_LIMIT < 1 or SIGNATURE_SAMPLES < 1:
        problems.append('Signature guards must be positive')
    if DEFAULT_VOCAB_SIZE < 3:
        problems.append(f'CATLAB_VOCAB_SIZE must be >= 3 (got {DEFAULT_VOCAB_SIZE})')

    if problems:
        raise ValueError(f"Invalid configuration: {'; '.join(problems)}")

    return True


# ---------------------------------------------------------------------------
# Experiment configs
# ---------------------------------------------------------------------------

C = TypeVar('C', bound='ExperimentConfig')


def _matches(value: Any, hint: Any) -> bool:
    origin = get_origin(hint)
    if origin is Union:
        return any(_matches(value, arg) for arg in get_args(hint))
    if origin in (list, List):
        (item,) = get_args(hint) or (Any,)
        return isinstance(value, list) and all(_matches(v, item) for v in value)
    if hint is Any:
        return True
    if hint is type(None):
        return value is None
    if isinstance(value, bool):
        return hint is bool
    if hint is float:
        return isinstance(value, (int, float))
    return isinstance(value, hint)


@dataclass
class ExperimentConfig:
    """Fields shared by every command."""

    seed: int = 0
    out: str = CATLAB_OUTPUT_DIR
    jobs: int = CATLAB_JOBS

    @classmethod
    def from_dict(cls: Type[C], data: Dict[str, Any]) -> C:
        """
        Build a config from a parsed document.

        Raises:
            InvalidConfig: If the document has unknown keys or bad values
        """
        if not isinstance(data, dict):
            raise InvalidConfig("Config document must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(f"Unknown config fields for {cls.__name__}: {', '.join(unknown)}")
        hints = get_type_hints(cls)
        wrong = [f"{name} (expected {getattr(hints[name], '__name__', hints[name])})"
                 for name, value in sorted(data.items()) if not _matches(value, hints[name])]
        if wrong:
            raise InvalidConfig(f"Wrong value types for {cls.__name__}: {', '.join(wrong)}")
        try:
            config = cls(**data)
        except TypeError as e:
            raise InvalidConfig(str(e))
        config.validate()
        return config

    @classmethod
    def load(cls: Type[C], path: Optional[str]) -> C:
        """Load a config document from a JSON file, or defaults when path is None."""
        if path is None:
            config = cls()
            config.validate()
            return config
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise InvalidConfig(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"Invalid JSON in config file {path}: {e}")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self):
        if self.jobs < 1:
            raise InvalidConfig(f"jobs must be >= 1 (got {self.jobs})")
        if self.seed < 0:
            raise InvalidConfig(f"seed must be >= 0 (got {self.seed})")


@dataclass
class VerifyConstructionsConfig(ExperimentConfig):
    """Exactness suites for the NAR, AR and selective-copy constructions."""

    vocab_size: int = 32
    nar_orders: List[int] = field(default_factory=lambda: [1, 2, 3])
    lengths: List[int] = field(default_factory=lambda: [16, 64, 128, 512])
    instances: int = 1000
    f_q: Optional[List[float]] = None
    temperature_eps: List[float] = field(default_factory=lambda: [1e-2, 1e-4])
    temperature_length: int = 128
    sc_signal_sizes: List[int] = field(default_factory=lambda: [8, 16])
    sc_max_signals: int = 16
    sc_max_noise: int = 240
    sc_instances: int = 1000

    def validate(self):
        super().validate()
        if self.instances < 1 or self.sc_instances < 1:
            raise InvalidConfig("Suites must contain at least one instance")
        if not self.nar_orders or not self.lengths:
            raise InvalidConfig("nar_orders and lengths must be non-empty")
        if any(n < 1 for n in self.nar_orders):
            raise InvalidConfig("N-gram orders must be >= 1")
        if any(length < 2 * max(self.nar_orders) + 1 for length in self.lengths):
            raise InvalidConfig("Every length must be at least 2N+1 for the largest N")
        if self.f_q is not None:
            if len(self.f_q) < 1:
                raise InvalidConfig("f_q must have at least one tap")
            if any(n != len(self.f_q) for n in self.nar_orders):
                raise InvalidConfig("An explicit f_q fixes N: nar_orders must all equal len(f_q)")
        if self.vocab_size < 3:
            raise InvalidConfig("vocab_size must be >= 3")


@dataclass
class LengenSweepConfig(ExperimentConfig):
    """Length-generalization sweep of a model built at one length."""

    model: str = 'exact'
    build_length: int = 128
    lengths: List[int] = field(default_factory=lambda: [32, 128, 512, 1024, 4096])
    suite_size: int = 200
    vocab_size: int = 32
    eta: float = 0.0
    epsilon0: float = 1e-3

    def validate(self):
        super().validate()
        if self.model not in ('exact', 'perturbed', 'corrupted', 'soft'):
            raise InvalidConfig(f"Unknown model family member: {self.model}")
        if not self.lengths or any(length < 3 for length in self.lengths):
            raise InvalidConfig("lengths must be non-empty and every length >= 3")
        if self.build_length < 3:
            raise InvalidConfig("build_length must be >= 3")
        if self.suite_size < 1:
            raise InvalidConfig("suite_size must be >= 1")
        if self.eta < 0:
            raise InvalidConfig("eta must be nonnegative")


@dataclass
class LcatPhaseConfig(ExperimentConfig):
    """Phase-transition sweep for Landmark CAT."""

    L: int = 2 ** 20
    block_sizes: List[int] = field(default_factory=lambda: [2 ** k for k in range(4, 11)])
    sigma2: float = 1.0
    filter_kind: str = 'block_mean'
    sim_mode: str = 'reduced'
    target_rates: List[float] = field(default_factory=lambda: [0.1, 0.5, 0.9])
    trials: int = 1000
    t: float = 0.0

    def validate(self):
        super().validate()
        if not self.block_sizes:
            raise InvalidConfig("block_sizes must be non-empty")
        for b in self.block_sizes:
            if b < 1 or b > self.L:
                raise InvalidConfig(f"Block size {b} must lie in [1, L={self.L}]")
            if -(-self.L // b) < 2:
                raise InvalidConfig(f"Block size {b} leaves fewer than 2 blocks")
        if self.sigma2 <= 0:
            raise InvalidConfig("sigma2 must be positive")
        if self.filter_kind not in ('block_mean', 'exp_smoothing'):
            raise InvalidConfig(f"Unknown filter_kind: {self.filter_kind}")
        if self.sim_mode not in ('full', 'reduced'):
            raise InvalidConfig(f"Unknown sim_mode: {self.sim_mode}")
        if self.sim_mode == 'full' and self.L > 2 ** 16:
            raise InvalidConfig("Full mode is limited to L <= 2^16; use reduced mode")
        if any(not 0 < r < 1 for r in self.target_rates):
            raise InvalidConfig("target_rates must lie strictly between 0 and 1")
        if self.trials < 1:
            raise InvalidConfig("trials must be >= 1")


@dataclass
class GenTasksConfig(ExperimentConfig):
    """Synthetic task suite generation."""

    preset: Optional[str] = None
    kind: str = 'MQAR'
    N: int = 1
    L: int = 64
    k: int = 16
    vocab_size: int = DEFAULT_VOCAB_SIZE
    n_train: int = 100000
    n_test: int = 3000
    no_match_fraction: float = 0.0

    def validate(self):
        super().validate()
        if self.kind not in ('AR', 'NAR', 'MQAR', 'MQNAR', 'SC'):
            raise InvalidConfig(f"Unknown task kind: {self.kind}")
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test == 0:
            raise InvalidConfig("Suite must contain at least one instance")
        if not 0.0 <= self.no_match_fraction < 1.0:
            raise InvalidConfig("no_match_fraction must lie in [0, 1)")


@dataclass
class ScDemoConfig(ExperimentConfig):
    """Selective-copy decoding demo."""

    signal_size: int = 8
    n_signal: int = 4
    n_noise: int = 12
    variant: str = 'infinite'
    instances: int = 3

    def validate(self):
        super().validate()
        if self.variant not in ('infinite', 'window'):
            raise InvalidConfig(f"Unknown selective-copy variant: {self.variant}")
        if self.n_signal > self.signal_size:
            raise InvalidConfig("n_signal cannot exceed signal_size for unique selective copying")
        if self.instances < 1:
            raise InvalidConfig("instances must be >= 1")


@dataclass
class AuditConfig(ExperimentConfig):
    """Landscape audit of one model family member."""

    model: str = 'perturbed'
    eta: float = 1e-2
    L: int = 128
    lengths: List[int] = field(default_factory=lambda: [128, 256, 512, 1024, 2048])
    suite_size: int = 200
    vocab_size: int = 32
    epsilon0: float = 1e-3

    def validate(self):
        super().validate()
        if self.model not in ('exact', 'perturbed', 'corrupted', 'soft'):
            raise InvalidConfig(f"Unknown model family member: {self.model}")
        if self.L < 3 or any(length < 3 for length in self.lengths):
            raise InvalidConfig("Lengths must be >= 3")
        if self.eta < 0:
            raise InvalidConfig("eta must be nonnegative")
