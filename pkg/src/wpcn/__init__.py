"""Distributed actor-critic resource allocation for multi-cell wireless powered
communication networks, with centralized baselines."""

from .config import ExperimentConfig, load_config
from .errors import WpcnError

__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "load_config", "WpcnError", "__version__"]
