"""
Run output persistence: atomic JSON writes, tracked artifacts and the run manifest.

Every file a CLI run produces goes through an ArtifactWriter, so the manifest
lists exactly what exists on disk. Writes are atomic (tempfile + os.replace);
a crash leaves either the previous file or the new one, never a partial one.
"""

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from enum import Enum, StrEnum
from pathlib import Path

import numpy as np
import polars as pl

from transport.fields import dump_array
from utils.constants import MANIFEST_FILENAME


def _jsonable(value):
    """Convert numpy scalars/arrays, enums and paths into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_json(payload: dict, path: Path) -> None:
    """
    Save a dict to a JSON file atomically.

    Uses tempfile + os.replace to avoid partial writes on crash.
    Cleans up temp file on failure to avoid orphaned files.

    Args:
        payload: Dict to save (numpy values are converted).
        path: Path to write.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with tempfile.NamedTemporaryFile(
        mode="w",
        dir=path.parent,
        suffix=".tmp",
        delete=False,
    ) as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
        temp_path = f.name

    try:
        os.replace(temp_path, path)
    except Exception:
        Path(temp_path).unlink(missing_ok=True)
        raise


def read_json(path: Path) -> dict:
    """Load a JSON artifact."""
    with open(path) as f:
        return json.load(f)


class RunStatus(StrEnum):
    OK = "ok"
    VALIDATION_FAILED = "validation_failed"
    SOLVER_FAILED = "solver_failed"
    IO_FAILED = "io_failed"


@dataclass
class RunManifest:
    """
    Record of one CLI run.

    artifact_list names files relative to output_dir; all of them exist when
    the manifest is written. The manifest itself is not in the list.
    """

    command: str
    config_path: Path | None
    output_dir: Path
    wall_time: float = 0.0
    artifact_list: list[str] = field(default_factory=list)
    exit_status: RunStatus = RunStatus.OK
    tolerances: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


class ArtifactWriter:
    """
    Writes run outputs into one directory and remembers what it wrote.

    Args:
        output_dir: Destination folder (created on first write).
    """

    def __init__(self, output_dir: Path) -> None:
        self.output_dir = Path(output_dir)
        self.written: list[str] = []

    def _target(self, name: str) -> Path:
        if name not in self.written:
            self.written.append(name)
        return self.output_dir / name

    def json(self, name: str, payload: dict) -> Path:
        """Write a JSON artifact."""
        path = self._target(name)
        write_json(payload, path)
        return path

    def dump(self, name: str, values: np.ndarray) -> Path:
        """Write a TIVP1 binary dump."""
        path = self._target(name)
        dump_array(values, path)
        return path

    def csv(self, name: str, frame: pl.DataFrame) -> Path:
        """Write a CSV table."""
        path = self._target(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.write_csv(path)
        return path

    def manifest(self, manifest: RunManifest) -> Path:
        """
        Write the manifest last, listing every artifact that exists on disk.

        Args:
            manifest: Run record; its artifact_list is replaced.

        Returns:
            Path to manifest.json.
        """
        manifest.artifact_list = [
            name for name in self.written if (self.output_dir / name).exists()
        ]
        path = self.output_dir / MANIFEST_FILENAME
        write_json(manifest.to_dict(), path)
        return path
