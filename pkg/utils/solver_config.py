"""
Solver default configuration loading from YAML.

This module provides cached access to the solver tolerances, positivity
thresholds and verification-suite settings in config/defaults.yaml. Problem
configs override individual keys; anything they omit falls back to here.

Note: Config is cached per process invocation. Tests that edit the file
must call load_solver_defaults.cache_clear().
"""

from functools import lru_cache
from pathlib import Path
from types import MappingProxyType

import yaml


CONFIG_PATH = Path(__file__).parent.parent / "config" / "defaults.yaml"

REQUIRED_KEYS = {"solver", "thresholds", "verify"}

REQUIRED_SOLVER_KEYS = {"picard_tol", "newton_tol", "max_picard", "max_newton"}


@lru_cache(maxsize=1)
def load_solver_defaults() -> MappingProxyType:
    """
    Load solver defaults from config/defaults.yaml.

    Returns:
        Read-only mapping with keys: solver, thresholds, verify.

    Raises:
        FileNotFoundError: If config file doesn't exist.
        yaml.YAMLError: If config file is invalid YAML.
        ValueError: If required keys are missing.
    """
    with open(CONFIG_PATH) as f:
        config = yaml.safe_load(f)

    missing = REQUIRED_KEYS - set(config)
    if missing:
        raise ValueError(f"defaults.yaml missing required keys: {sorted(missing)}")

    missing_solver = REQUIRED_SOLVER_KEYS - set(config["solver"])
    if missing_solver:
        raise ValueError(
            f"defaults.yaml 'solver' missing required keys: {sorted(missing_solver)}"
        )

    # Freeze so callers can't corrupt the cache
    return MappingProxyType(
        {section: MappingProxyType(dict(values)) for section, values in config.items()}
    )


def get_solver_defaults() -> dict:
    """
    Get a mutable copy of the solver block.

    Returns:
        Dict of solver settings (tolerances, iteration caps, Krylov options).
    """
    return dict(load_solver_defaults()["solver"])


def get_threshold_defaults() -> dict:
    """
    Get a mutable copy of the positivity thresholds.

    Returns:
        Dict with g0, u_min and sigma0.
    """
    return dict(load_solver_defaults()["thresholds"])


def get_verify_defaults() -> dict:
    """
    Get a mutable copy of the verification-suite settings.

    Returns:
        Dict with seed, family_size and refinements.
    """
    return dict(load_solver_defaults()["verify"])
