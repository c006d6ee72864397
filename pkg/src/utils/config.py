"""
Configuration loading and logging setup.

Defaults live in the dataclasses below; ``config.yml`` at the repository root
overrides them section by section, and RESCNN_THREADS overrides the thread count.
"""

import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import yaml

from src.utils.errors import DomainError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / "config.yml"
THREADS_ENV = "RESCNN_THREADS"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass
class TrainingSettings:
    steps: Optional[int] = None
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 64
    projection: str = "step"
    optimizer: str = "sgd"
    seed: int = 0
    bound_conv: float = 1.0
    bound_fc: float = 1.0


@dataclass
class DataSettings:
    noise_sigma: float = 0.1
    probes: int = 20000
    grid_points: int = 100
    sample_points: int = 100_000


@dataclass
class ExperimentSettings:
    function: str = "sin_product"
    barron_function: str = "gaussian_bump"
    beta: float = 2.0
    dim: int = 2
    filter_size: int = 2
    channels: int = 4
    holder_budgets: List[int] = field(default_factory=lambda: [9, 25, 81])
    barron_budgets: List[int] = field(default_factory=lambda: [2, 4, 8, 16, 32])
    sample_sizes: List[int] = field(default_factory=lambda: [256, 512, 1024, 2048, 4096])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    candidate_budget: int = 2000


@dataclass
class CompilerSettings:
    uniform_channels: bool = True


@dataclass
class RuntimeSettings:
    threads: int = 1


@dataclass
class ToolkitConfig:
    training: TrainingSettings = field(default_factory=TrainingSettings)
    data: DataSettings = field(default_factory=DataSettings)
    experiments: ExperimentSettings = field(default_factory=ExperimentSettings)
    compiler: CompilerSettings = field(default_factory=CompilerSettings)
    runtime: RuntimeSettings = field(default_factory=RuntimeSettings)


def _merge(section, values, name):
    known = {f.name for f in fields(section)}
    for key, value in (values or {}).items():
        if key not in known:
            raise DomainError(f"unknown config key {name}.{key}")
        setattr(section, key, value)


def load_config(path=None):
    """Load ``config.yml`` (or ``path``) over the built-in defaults."""
    config = ToolkitConfig()
    config_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if config_path.exists():
        with open(config_path, "r") as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise DomainError(f"{config_path}: top level must be a mapping")
        for name, values in raw.items():
            if name not in {f.name for f in fields(config)}:
                raise DomainError(f"unknown config section {name!r}")
            if values is not None and not isinstance(values, dict):
                raise DomainError(f"config section {name!r} must be a mapping")
            _merge(getattr(config, name), values, name)
        logger.debug("Loaded configuration from %s", config_path)
    elif path is not None:
        raise DomainError(f"config file not found: {config_path}")

    threads = os.environ.get(THREADS_ENV)
    if threads:
        try:
            config.runtime.threads = int(threads)
        except ValueError:
            raise DomainError(f"{THREADS_ENV} must be an integer, got {threads!r}") from None
    if config.runtime.threads < 1:
        raise DomainError(f"runtime.threads must be >= 1, got {config.runtime.threads}")
    return config


def configure_logging(verbose=False):
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
