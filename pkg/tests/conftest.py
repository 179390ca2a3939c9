"""
Pytest fixtures for the kinetic transport solver tests.

Fixtures provide small grids, config-dict factories and ready-built specs.
They're injected into test functions by name; pytest handles the wiring
automatically.
"""

import copy
import json
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from transport.grid import Geometry, PhaseGrid, build_grid
from transport.problem import ProblemSpec, build_problem

# ---------------------------------------------------------------------------
# Geometry and grids
# ---------------------------------------------------------------------------

# Flight time L / v0 = 1 stays below T, so every characteristic leaves the slab
GEOMETRY = {"L": 1.0, "v0": 1.0, "v1": 2.0, "T": 1.5}

# Tight tolerances for round trips through the forward map
ROUND_TRIP_SOLVER = {"picard_tol": 1e-13, "newton_tol": 1e-12}


@pytest.fixture
def geometry() -> Geometry:
    """Reference slab: L = 1, speeds in [1, 2], T = 1.5."""
    return Geometry(**GEOMETRY)


@pytest.fixture
def small_grid(geometry) -> PhaseGrid:
    """6 x 4 x 8 grid, small enough for dense algebra."""
    return build_grid(geometry, Nx=6, Nv=4, Nt=8)


@pytest.fixture
def tiny_grid(geometry) -> PhaseGrid:
    """4 x 4 x 4 grid for brute-force oracles."""
    return build_grid(geometry, Nx=4, Nv=4, Nt=4)


# ---------------------------------------------------------------------------
# Config factories
# ---------------------------------------------------------------------------


@pytest.fixture
def make_config() -> Callable[..., dict]:
    """
    Factory for problem config dicts.

    Keyword arguments replace top-level blocks; `coefficients` is merged
    into the defaults rather than replacing them.
    """

    def _make(
        mode: str = "forward",
        grid: dict | None = None,
        coefficients: dict | None = None,
        **blocks,
    ) -> dict:
        config = {
            "geometry": dict(GEOMETRY),
            "grid": grid or {"Nx": 6, "Nv": 4, "Nt": 8},
            "mode": mode,
            "coefficients": {"Sigma": "1", "J": "0.1", "g": "exp(-t)", "u0": "1"},
        }
        if mode == "forward":
            config["coefficients"]["F"] = "sin(pi*x/L)"
        if mode == "inverse_absorption":
            del config["coefficients"]["Sigma"]
            config["coefficients"]["F"] = "1"
            config["coefficients"]["u0"] = "1 + 0.5*x/L"
        if mode != "forward":
            config["data"] = {"psi": "0"}
        config["coefficients"].update(coefficients or {})
        config.update(copy.deepcopy(blocks))
        return config

    return _make


@pytest.fixture
def write_config(tmp_path) -> Callable[[dict, str], Path]:
    """Factory writing a config dict as JSON under tmp_path."""

    def _write(config: dict, name: str = "problem.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(config, indent=2))
        return path

    return _write


# ---------------------------------------------------------------------------
# Built specs
# ---------------------------------------------------------------------------


@pytest.fixture
def forward_spec(make_config) -> ProblemSpec:
    """Linear forward problem with scattering and a smooth source."""
    return build_problem(make_config())


@pytest.fixture
def linear_source_spec(make_config) -> ProblemSpec:
    """Linear inverse-source problem on the small grid with tight tolerances."""
    return build_problem(make_config(mode="inverse_source", solver=ROUND_TRIP_SOLVER))


@pytest.fixture
def nonlinear_source_spec(make_config) -> ProblemSpec:
    """Inverse-source problem with softabs(0.1) and one small separable Q term."""
    return build_problem(
        make_config(
            mode="inverse_source",
            coefficients={
                "alpha": {"family": "softabs", "c": 0.1},
                "Q": [{"q1": "0.2*cos(pi*x/L)", "q2": "1"}],
            },
            solver=ROUND_TRIP_SOLVER,
        )
    )


@pytest.fixture
def round_trip_solver() -> dict:
    """Solver block with the tight round-trip tolerances."""
    return dict(ROUND_TRIP_SOLVER)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator so random fields are the same on every run."""
    return np.random.default_rng(12345)
