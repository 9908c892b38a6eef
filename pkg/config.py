"""Workbench configuration."""
import os
from pathlib import Path
from typing import Any, Dict, List, Optional
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Constants
PROJECT_ROOT = Path(__file__).resolve().parent
PROTOCOL_DIR = PROJECT_ROOT / 'protocols'

_INTEGER_SETTINGS = {
    'POPKIT_THREADS': 1,
    'POPKIT_NODE_CAP': 20000,
    'POPKIT_CAP_FACTOR': 10000,
    'POPKIT_DENSE_LIMIT': 2000,
}


def _env_int(name: str, default: int) -> int:
    """Read an integer setting, falling back to the default on bad input."""
    value = os.getenv(name)
    if value is None or not value.strip():
        return default
    try:
        return int(value)
    except ValueError:
        return default


class Config:
    """Base configuration."""

    # Worker processes used for independent trials
    THREADS = _env_int('POPKIT_THREADS', 1)

    # Logging
    LOG_DIR = os.getenv('POPKIT_LOG_DIR', 'logs')
    LOG_LEVEL = os.getenv('POPKIT_LOG_LEVEL', 'INFO')

    # Exact verification limits
    NODE_CAP = _env_int('POPKIT_NODE_CAP', 20000)
    DENSE_LIMIT = _env_int('POPKIT_DENSE_LIMIT', 2000)

    # Default interaction budget is CAP_FACTOR * n^2
    CAP_FACTOR = _env_int('POPKIT_CAP_FACTOR', 10000)

    @staticmethod
    def validate_config() -> List[str]:
        """
        Validate the integer settings found in the environment

        Returns:
            List[str]: One message per malformed or non-positive setting
        """
        problems = []
        for name in _INTEGER_SETTINGS:
            raw = os.getenv(name)
            if raw is None or not raw.strip():
                continue
            try:
                value = int(raw)
            except ValueError:
                problems.append(f"{name} must be an integer, got {raw!r}")
                continue
            if value < 1:
                problems.append(f"{name} must be positive, got {value}")
        return problems

    @classmethod
    def default_cap(cls, n: int) -> int:
        """Interaction budget for a population of n agents."""
        return cls.CAP_FACTOR * n * n


class ProductionConfig(Config):
    """Production configuration."""
    DEBUG = False
    TESTING = False


class DevelopmentConfig(Config):
    """Development configuration."""
    DEBUG = True
    TESTING = False
    LOG_LEVEL = os.getenv('POPKIT_LOG_LEVEL', 'DEBUG')


class TestingConfig(Config):
    """Testing configuration."""
    DEBUG = True
    TESTING = True
    THREADS = 1
    LOG_LEVEL = 'WARNING'


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


# Set by use_config(); takes precedence over POPKIT_ENV
_active: Optional[type] = None


def get_config(name: Optional[str] = None) -> type:
    """Return the configuration class selected by name, use_config() or POPKIT_ENV."""
    if name is None and _active is not None:
        return _active
    name = name or os.getenv('POPKIT_ENV', 'default')
    return config.get(name, config['default'])


def use_config(settings: Optional[type] = None, overrides: Optional[Dict[str, Any]] = None) -> type:
    """
    Make a configuration the active one

    Args:
        settings: Configuration class (defaults to the POPKIT_ENV selection)
        overrides: Attribute values layered on top of it

    Returns:
        type: The active configuration class
    """
    global _active
    _active = None
    base = settings or get_config()
    _active = type(f"{base.__name__}Override", (base,), dict(overrides)) if overrides else base
    return _active


def reset_config() -> None:
    global _active
    _active = None
