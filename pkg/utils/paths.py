"""
Centralized run-output path construction.

All output directories should be obtained through this module so the
KINV_OUTPUT_DIR environment variable (with .env support) is honored the same
way everywhere.

Functions (not module-level constants) ensure environment is read at runtime,
not import time.
"""

import os
from pathlib import Path

from dotenv import load_dotenv


DEFAULT_OUTPUT_ROOT = "./runs"


def get_output_root() -> Path:
    """
    Get the root directory for run outputs.

    Reads KINV_OUTPUT_DIR from environment (with .env support).
    Default: ./runs

    Returns:
        Path to the output root.
    """
    load_dotenv()
    return Path(os.getenv("KINV_OUTPUT_DIR", DEFAULT_OUTPUT_ROOT))


def get_run_dir(command: str, config_path: Path | None = None) -> Path:
    """
    Get the default output directory for one CLI run.

    Args:
        command: CLI command name (forward, inverse, verify-<suite>).
        config_path: Config driving the run; its stem names the subdirectory.

    Returns:
        Path like runs/inverse/tiny_linear_inverse/.
    """
    name = config_path.stem if config_path is not None else "default"
    return get_output_root() / command / name


def get_examples_dir() -> Path:
    """
    Get the bundled example problem configs directory.

    Returns:
        Path to config/examples/ in the repository.
    """
    return Path(__file__).parent.parent / "config" / "examples"


def get_log_level() -> str:
    """
    Get the logging level name from KINV_LOG.

    Accepts error, info or debug (case-insensitive); anything else falls
    back to info.

    Returns:
        Upper-case level name for logging.basicConfig.
    """
    load_dotenv()
    level = os.getenv("KINV_LOG", "info").strip().lower()
    if level not in ("error", "info", "debug"):
        level = "info"
    return level.upper()
