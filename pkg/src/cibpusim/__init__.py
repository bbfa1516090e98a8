"""Secure branch-prediction-unit model: encrypted skewed predictor
structures, their bins-and-balls security analytics, and an attack
harness, all deterministic under explicit seeds."""

from .config import SimConfig, DEFAULT_SEED
from .keying import ConfigError, InvariantError, KeyBundle, MappingMode, derive_keys

__all__ = [
    "SimConfig", "DEFAULT_SEED", "ConfigError", "InvariantError",
    "KeyBundle", "MappingMode", "derive_keys",
]
__version__ = "0.1.0"
