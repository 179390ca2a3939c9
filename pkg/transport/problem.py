"""
Problem definitions: config ingestion, coefficient sampling and hypothesis checks.

A problem config is a JSON object (.yaml or .yml files are read as YAML):

    {
      "geometry": {"L": 1, "v0": 1, "v1": 2, "T": 1},
      "grid": {"Nx": 16, "Nv": 8, "Nt": 32},
      "mode": "forward" | "inverse_source" | "inverse_absorption",
      "coefficients": {
        "Sigma" | "sigma_g": expr, "J": expr, "Q": [{"q1": expr, "q2": expr}],
        "alpha": {"family": ..., "c": ...}, "g": expr, "h": expr,
        "u0": expr | {"file": path}, "F" | "f": expr, "mu": expr, "phi": expr,
        "sigma_prior": expr
      },
      "data": {"psi": expr | {"file": path}},
      "solver": {...}, "thresholds": {...}, "verify": {...},
      "exact": {"u": expr, "control": expr},
      "strict": false
    }

Every coefficient is sampled on the grid once, in build_problem; the solvers
only ever see arrays.
"""

import copy
import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field, fields
from enum import StrEnum
from pathlib import Path

import numpy as np
import yaml

from transport.alpha import AlphaSpec, alpha_from_config
from transport.artifacts import write_json
from transport.errors import (
    ConfigError,
    FieldError,
    KinvError,
    UnboundVariableError,
    ValidationError,
)
from transport.expressions import (
    Node,
    eval_expression,
    geometry_bindings,
    parse_expression,
)
from transport.fields import load_array
from transport.grid import Geometry, PhaseGrid, build_grid
from utils.constants import PSI_TRACE_SLOPES, PSI_TRACE_TOL
from utils.solver_config import (
    get_solver_defaults,
    get_threshold_defaults,
    get_verify_defaults,
)

logger = logging.getLogger(__name__)


class Mode(StrEnum):
    FORWARD = "forward"
    INVERSE_SOURCE = "inverse_source"
    INVERSE_ABSORPTION = "inverse_absorption"

    @property
    def is_inverse(self) -> bool:
        return self is not Mode.FORWARD


class Severity(StrEnum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Violation:
    """One failed hypothesis or advisory flag found by validate_problem."""

    code: str
    message: str
    severity: Severity = Severity.ERROR

    def __str__(self) -> str:
        return f"[{self.severity}] {self.code}: {self.message}"


@dataclass(frozen=True)
class SolverSettings:
    picard_tol: float
    newton_tol: float
    max_picard: int
    max_newton: int
    newton_damping: bool = True
    dense_limit: int = 4096
    krylov_tol: float = 1e-12
    krylov_restart: int = 50
    krylov_maxiter: int = 200
    check_sigma_lower_bound: bool = False


@dataclass(frozen=True)
class Thresholds:
    g0: float
    u_min: float
    sigma0: float


@dataclass(frozen=True)
class VerifySettings:
    seed: int
    family_size: int
    refinements: int


@dataclass(frozen=True, eq=False)
class SampledFields:
    """
    Coefficient arrays on the grid.

    Space-time arrays have shape (Nt + 1, Nx, Nv); slices (Nx, Nv); inflow data
    (Nt + 1, Nv) with one value per ordinate on its inflow face. The kernel J
    is indexed [t][x][v][vp] and keeps size-1 axes for variables its
    expression does not use.
    """

    sigma: np.ndarray
    J: np.ndarray
    q1: tuple[np.ndarray, ...]
    q2: tuple[np.ndarray, ...]
    g: np.ndarray
    h: np.ndarray
    u0: np.ndarray
    F: np.ndarray | None
    mu: np.ndarray
    phi: np.ndarray
    phi_trace: np.ndarray
    psi: np.ndarray | None = None
    psi_trace: np.ndarray | None = None
    sigma_prior: np.ndarray | None = None
    exact_u: np.ndarray | None = None
    exact_control: np.ndarray | None = None

    @property
    def has_scattering(self) -> bool:
        return bool(np.any(self.J != 0.0))

    @property
    def has_nonlinear_terms(self) -> bool:
        return len(self.q1) > 0


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    Fully built problem: grid, mode, nonlinearity, settings and sampled fields.

    Built by build_problem / load_problem; the raw config (with effective
    solver settings and absolute file references) is kept for serialization.
    """

    grid: PhaseGrid
    mode: Mode
    alpha: AlphaSpec
    settings: SolverSettings
    thresholds: Thresholds
    verify: VerifySettings
    strict: bool
    fields: SampledFields = field(repr=False)
    expressions: Mapping[str, Node] = field(repr=False, default_factory=dict)
    config: Mapping = field(repr=False, default_factory=dict)
    source_path: Path | None = None

    @property
    def geometry(self) -> Geometry:
        return self.grid.geometry

    @property
    def is_linear(self) -> bool:
        """True when S vanishes: zero alpha family or no Q terms."""
        return self.alpha.is_zero or not self.fields.has_nonlinear_terms

    def to_config(self) -> dict:
        """
        Serializable config that rebuilds this spec.

        Returns:
            Deep copy of the normalized config dict.
        """
        return copy.deepcopy(dict(self.config))


# =============================================================================
# SAMPLING
# =============================================================================


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


def _sample(ast: Node, bindings: dict, shape: tuple[int, ...], key: str) -> np.ndarray:
    try:
        value = eval_expression(ast, bindings)
    except UnboundVariableError as e:
        raise ConfigError(f"{key}: {e} (this coefficient may not depend on it)") from None
    return np.broadcast_to(np.asarray(value, dtype=np.float64), shape)


def space_time_bindings(grid: PhaseGrid) -> dict:
    """Broadcastable x, v, t arrays for sampling on (Nt + 1, Nx, Nv)."""
    return {
        **geometry_bindings(grid.geometry),
        "x": grid.x_centers[None, :, None],
        "v": grid.v_nodes[None, None, :],
        "t": grid.t_levels[:, None, None],
    }


def phase_bindings(grid: PhaseGrid) -> dict:
    """Broadcastable x, v arrays for sampling stationary fields on (Nx, Nv)."""
    return {
        **geometry_bindings(grid.geometry),
        "x": grid.x_centers[:, None],
        "v": grid.v_nodes[None, :],
    }


def sample_space_time(ast: Node, grid: PhaseGrid, key: str = "expression") -> np.ndarray:
    """
    Sample an expression over x, v, t on the full grid.

    Args:
        ast: Parsed expression.
        grid: Phase grid.
        key: Config key for error messages.

    Returns:
        Array of shape (Nt + 1, Nx, Nv).
    """
    return np.array(_sample(ast, space_time_bindings(grid), grid.shape3, key))


def sample_phase(ast: Node, grid: PhaseGrid, key: str = "expression") -> np.ndarray:
    """
    Sample a stationary expression over x, v (no t binding).

    Args:
        ast: Parsed expression.
        grid: Phase grid.
        key: Config key for error messages.

    Returns:
        Array of shape (Nx, Nv).

    Raises:
        ConfigError: If the expression depends on t.
    """
    return np.array(_sample(ast, phase_bindings(grid), grid.shape2, key))


def sample_inflow(ast: Node, grid: PhaseGrid, key: str = "mu") -> np.ndarray:
    """
    Sample boundary data on each ordinate's inflow face over all time levels.

    Args:
        ast: Parsed expression over x, v, t.
        grid: Phase grid.
        key: Config key for error messages.

    Returns:
        Array of shape (Nt + 1, Nv).
    """
    bindings = {
        **geometry_bindings(grid.geometry),
        "x": grid.inflow_coordinates()[None, :],
        "v": grid.v_nodes[None, :],
        "t": grid.t_levels[:, None],
    }
    return np.array(_sample(ast, bindings, (grid.Nt + 1, grid.Nv), key))


def sample_face_trace(ast: Node, grid: PhaseGrid, key: str) -> np.ndarray:
    """
    Sample a stationary expression on the inflow faces (x = 0 for v > 0, x = L for v < 0).

    Args:
        ast: Parsed expression over x, v.
        grid: Phase grid.
        key: Config key for error messages.

    Returns:
        Array of length Nv.
    """
    bindings = {
        **geometry_bindings(grid.geometry),
        "x": grid.inflow_coordinates(),
        "v": grid.v_nodes,
    }
    return np.array(_sample(ast, bindings, (grid.Nv,), key))


def extrapolate_face_trace(values: np.ndarray, grid: PhaseGrid) -> tuple[np.ndarray, np.ndarray]:
    """
    Linear extrapolation of a gridded slice to the inflow faces.

    Uses the two cells next to each ordinate's inflow face and also returns
    the one-cell variation there.

    Args:
        values: Slice of shape (Nx, Nv).
        grid: Phase grid (Nx >= 2).

    Returns:
        (trace, variation), each of length Nv.
    """
    inner = np.where(grid.positive, values[0], values[-1])
    following = np.where(grid.positive, values[1], values[-2])
    return inner - 0.5 * (following - inner), np.abs(following - inner)


def sample_kernel(ast: Node, grid: PhaseGrid, key: str = "J") -> np.ndarray:
    """
    Sample J(x, v, t, vp) as a [t][x][v][vp] array.

    Axes whose variable the expression does not use stay size 1, so a
    constant kernel costs one float.

    Args:
        ast: Parsed expression over x, v, t, vp.
        grid: Phase grid.
        key: Config key for error messages.

    Returns:
        Array broadcastable to (Nt + 1, Nx, Nv, Nv).
    """
    bindings = {
        **geometry_bindings(grid.geometry),
        "x": grid.x_centers[None, :, None, None],
        "v": grid.v_nodes[None, None, :, None],
        "t": grid.t_levels[:, None, None, None],
        "vp": grid.v_nodes[None, None, None, :],
    }
    try:
        value = np.asarray(eval_expression(ast, bindings), dtype=np.float64)
    except UnboundVariableError as e:
        raise ConfigError(f"{key}: {e}") from None
    return value.reshape((1,) * (4 - value.ndim) + value.shape)


# =============================================================================
# CONFIG PARSING
# =============================================================================

_SPACE_TIME_FILE_KEYS = {"u0", "F"}


def _require(block: Mapping, key: str, where: str):
    if not isinstance(block, Mapping):
        raise ConfigError(f"{where} must be an object")
    if key not in block:
        raise ConfigError(f"missing key '{key}'" + (f" in {where}" if where else ""))
    return block[key]


def _number(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _count(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return int(value)


def _is_file_ref(value) -> bool:
    return isinstance(value, Mapping) and "file" in value


def _resolve(value: dict, base_dir: Path | None) -> Path:
    path = Path(value["file"])
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return path.resolve()


def _parse(value, key: str) -> Node:
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be an expression string, got {value!r}")
    if isinstance(value, (int, float)):
        value = repr(float(value))
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be an expression string, got {value!r}")
    try:
        return parse_expression(value)
    except ConfigError as e:
        raise ConfigError(f"{key}: {e}") from e


def _load_field(value: dict, base_dir: Path | None, shape: tuple, key: str) -> np.ndarray:
    path = _resolve(value, base_dir)
    try:
        array = load_array(path)
    except FieldError as e:
        raise ConfigError(f"{key}: {e}") from None
    if array.shape != shape:
        raise ConfigError(f"{key}: file {path} has shape {array.shape}, expected {shape}")
    if not np.all(np.isfinite(array)):
        raise ConfigError(f"{key}: file {path} contains NaN or inf")
    return array


def _settings(config: Mapping) -> tuple[SolverSettings, Thresholds, VerifySettings]:
    solver = get_solver_defaults()
    thresholds = get_threshold_defaults()
    verify = get_verify_defaults()

    for name, target in (("solver", solver), ("thresholds", thresholds), ("verify", verify)):
        block = config.get(name) or {}
        if not isinstance(block, Mapping):
            raise ConfigError(f"{name} must be an object")
        unknown = set(block) - set(target)
        if unknown:
            raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
        target.update(block)

    try:
        settings = SolverSettings(
            picard_tol=_number(solver["picard_tol"], "solver.picard_tol"),
            newton_tol=_number(solver["newton_tol"], "solver.newton_tol"),
            max_picard=_count(solver["max_picard"], "solver.max_picard"),
            max_newton=_count(solver["max_newton"], "solver.max_newton"),
            newton_damping=bool(solver["newton_damping"]),
            dense_limit=_count(solver["dense_limit"], "solver.dense_limit"),
            krylov_tol=_number(solver["krylov_tol"], "solver.krylov_tol"),
            krylov_restart=_count(solver["krylov_restart"], "solver.krylov_restart"),
            krylov_maxiter=_count(solver["krylov_maxiter"], "solver.krylov_maxiter"),
            check_sigma_lower_bound=bool(solver["check_sigma_lower_bound"]),
        )
    except KeyError as e:
        raise ConfigError(f"missing solver setting {e}") from None

    return (
        settings,
        Thresholds(**{k: _number(v, f"thresholds.{k}") for k, v in thresholds.items()}),
        VerifySettings(**{k: _count(v, f"verify.{k}") for k, v in verify.items()}),
    )


def build_problem(
    config: Mapping,
    base_dir: Path | None = None,
    source_path: Path | None = None,
    strict: bool | None = None,
) -> ProblemSpec:
    """
    Build a ProblemSpec from a config mapping.

    Args:
        config: Parsed config object (see module docstring).
        base_dir: Folder that relative {"file": ...} references resolve against.
        source_path: Config file the mapping came from, if any.
        strict: Overrides the config's "strict" flag when not None.

    Returns:
        Spec with every coefficient sampled on the grid.

    Raises:
        ConfigError: On a missing or ill-typed key, bad expression, or bad file.
        ValidationError: On grid invariant violations, or hypothesis violations
            when strict mode is on.
    """
    if not isinstance(config, Mapping):
        raise ConfigError("config must be a JSON object")
    config = copy.deepcopy(dict(config))

    geometry_block = _require(config, "geometry", "")
    geometry = Geometry(
        **{
            k: _number(_require(geometry_block, k, "geometry"), f"geometry.{k}")
            for k in ("L", "v0", "v1", "T")
        }
    )
    grid_block = _require(config, "grid", "")
    grid = build_grid(
        geometry,
        **{k: _count(_require(grid_block, k, "grid"), f"grid.{k}") for k in ("Nx", "Nv", "Nt")},
    )

    try:
        mode = Mode(config.get("mode", Mode.FORWARD))
    except ValueError:
        raise ConfigError(f"unknown mode {config.get('mode')!r}") from None

    coefficients = config.get("coefficients") or {}
    if not isinstance(coefficients, Mapping):
        raise ConfigError("coefficients must be an object")
    data = config.get("data") or {}
    exact = config.get("exact") or {}

    settings, thresholds, verify = _settings(config)
    alpha = alpha_from_config(coefficients.get("alpha"))
    expressions: dict[str, Node] = {}

    def expr(key: str, default: str | None = "0") -> Node | None:
        value = coefficients.get(key, default)
        if value is None:
            return None
        expressions[key] = _parse(value, f"coefficients.{key}")
        return expressions[key]

    def space_time(key: str, default: str | None = "0") -> np.ndarray | None:
        value = coefficients.get(key, default)
        if _is_file_ref(value) and key in _SPACE_TIME_FILE_KEYS:
            resolved = str(_resolve(value, base_dir))
            coefficients[key] = {"file": resolved}
            return _load_field({"file": resolved}, None, grid.shape3, f"coefficients.{key}")
        ast = expr(key, default)
        return None if ast is None else sample_space_time(ast, grid, f"coefficients.{key}")

    g = space_time("g", "1")
    h = space_time("h", "0")
    u0 = space_time("u0", "0")
    mu = sample_inflow(expr("mu"), grid, "coefficients.mu")
    phi_ast = expr("phi")
    phi = sample_phase(phi_ast, grid, "coefficients.phi")
    phi_trace = sample_face_trace(phi_ast, grid, "coefficients.phi")
    J = sample_kernel(expr("J"), grid, "coefficients.J")

    # Absorption: Sigma = sigma * g when given as sigma_g
    if "Sigma" in coefficients and "sigma_g" in coefficients:
        raise ConfigError("give either coefficients.Sigma or coefficients.sigma_g, not both")
    if mode is Mode.INVERSE_ABSORPTION:
        if "Sigma" in coefficients or "sigma_g" in coefficients:
            raise ConfigError(
                "Sigma is the unknown in inverse_absorption mode; use coefficients.sigma_prior"
            )
        sigma = np.zeros(grid.shape3)
    elif "sigma_g" in coefficients:
        sigma = space_time("sigma_g") * g
    else:
        sigma = space_time("Sigma")

    # Source: F directly, or f * g + h
    if "F" in coefficients and "f" in coefficients:
        raise ConfigError("give either coefficients.F or coefficients.f, not both")
    if mode is Mode.INVERSE_SOURCE:
        if "F" in coefficients or "f" in coefficients:
            raise ConfigError("F is the unknown in inverse_source mode; drop coefficients.F/f")
        F = None
    elif "f" in coefficients:
        f_values = sample_phase(expr("f"), grid, "coefficients.f")
        F = f_values[None, :, :] * g + h
    else:
        F = space_time("F")

    Q = coefficients.get("Q") or []
    if not isinstance(Q, list):
        raise ConfigError("coefficients.Q must be a list of {q1, q2} terms")
    q1_terms, q2_terms = [], []
    for n, term in enumerate(Q):
        where = f"coefficients.Q[{n}]"
        q1_ast = _parse(_require(term, "q1", where), f"{where}.q1")
        q2_ast = _parse(_require(term, "q2", where), f"{where}.q2")
        expressions[f"Q[{n}].q1"] = q1_ast
        expressions[f"Q[{n}].q2"] = q2_ast
        q1_terms.append(_readonly(sample_space_time(q1_ast, grid, f"{where}.q1")))
        q2_terms.append(_readonly(sample_phase(q2_ast, grid, f"{where}.q2")))

    sigma_prior = None
    if "sigma_prior" in coefficients:
        if mode is not Mode.INVERSE_ABSORPTION:
            logger.warning("coefficients.sigma_prior is only used in inverse_absorption mode")
        sigma_prior = sample_phase(expr("sigma_prior", None), grid, "coefficients.sigma_prior")

    psi = psi_trace = None
    if mode.is_inverse and "psi" not in data:
        raise ConfigError("psi required")
    if "psi" in data:
        value = data["psi"]
        if _is_file_ref(value):
            resolved = str(_resolve(value, base_dir))
            data["psi"] = {"file": resolved}
            psi = _load_field({"file": resolved}, None, grid.shape2, "data.psi")
        else:
            psi_ast = _parse(value, "data.psi")
            expressions["psi"] = psi_ast
            psi = sample_phase(psi_ast, grid, "data.psi")
            psi_trace = sample_face_trace(psi_ast, grid, "data.psi")

    exact_u = exact_control = None
    if "u" in exact:
        expressions["exact.u"] = _parse(exact["u"], "exact.u")
        exact_u = sample_space_time(expressions["exact.u"], grid, "exact.u")
    if "control" in exact:
        expressions["exact.control"] = _parse(exact["control"], "exact.control")
        exact_control = sample_phase(expressions["exact.control"], grid, "exact.control")

    sampled = SampledFields(
        sigma=_readonly(sigma),
        J=_readonly(J),
        q1=tuple(q1_terms),
        q2=tuple(q2_terms),
        g=_readonly(g),
        h=_readonly(h),
        u0=_readonly(u0),
        F=None if F is None else _readonly(F),
        mu=_readonly(mu),
        phi=_readonly(phi),
        phi_trace=_readonly(phi_trace),
        psi=None if psi is None else _readonly(psi),
        psi_trace=None if psi_trace is None else _readonly(psi_trace),
        sigma_prior=None if sigma_prior is None else _readonly(sigma_prior),
        exact_u=None if exact_u is None else _readonly(exact_u),
        exact_control=None if exact_control is None else _readonly(exact_control),
    )

    for name in (f.name for f in fields(sampled)):
        array = getattr(sampled, name)
        if isinstance(array, np.ndarray) and not np.all(np.isfinite(array)):
            raise ConfigError(f"{name} contains non-finite values on the grid")

    is_strict = bool(config.get("strict", False)) if strict is None else strict
    config["coefficients"] = coefficients
    if data:
        config["data"] = data
    config["mode"] = str(mode)
    config["strict"] = is_strict
    config["solver"] = {f.name: getattr(settings, f.name) for f in fields(settings)}
    config["thresholds"] = {f.name: getattr(thresholds, f.name) for f in fields(thresholds)}
    config["verify"] = {f.name: getattr(verify, f.name) for f in fields(verify)}

    spec = ProblemSpec(
        grid=grid,
        mode=mode,
        alpha=alpha,
        settings=settings,
        thresholds=thresholds,
        verify=verify,
        strict=is_strict,
        fields=sampled,
        expressions=expressions,
        config=config,
        source_path=source_path,
    )

    violations = validate_problem(spec)
    for violation in violations:
        if violation.severity is Severity.WARNING:
            logger.warning(str(violation))
        else:
            logger.error(str(violation))
    errors = [v for v in violations if v.severity is Severity.ERROR]
    if is_strict and errors:
        summary = "; ".join(v.message for v in errors)
        raise ValidationError(f"strict mode: {len(errors)} violation(s): {summary}", errors)

    return spec


def load_problem(path: Path, strict: bool | None = None) -> ProblemSpec:
    """
    Load and validate a problem config file.

    Args:
        path: JSON (or YAML) config file.
        strict: Overrides the config's "strict" flag when not None.

    Returns:
        Built ProblemSpec.

    Raises:
        OSError: If the file cannot be read.
        ConfigError: On schema errors or malformed JSON.
        ValidationError: On invariant violations (and hypothesis violations in strict mode).
    """
    path = Path(path)
    with open(path) as f:
        text = f.read()
    try:
        # YAML 1.1 reads exponent floats without a dot (1e-10) as strings
        if path.suffix.lower() in (".yaml", ".yml"):
            config = yaml.safe_load(text)
        else:
            config = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"{path} is not valid JSON/YAML: {e}") from None

    logger.info(f"Loaded problem config {path}")
    return build_problem(config, base_dir=path.parent, source_path=path, strict=strict)


def save_problem(spec: ProblemSpec, path: Path) -> None:
    """
    Write a spec back out as a JSON config that load_problem rebuilds identically.

    Args:
        spec: Problem to serialize.
        path: Destination .json file.
    """
    write_json(spec.to_config(), Path(path))


# =============================================================================
# VALIDATION
# =============================================================================


def _count_below(values: np.ndarray, threshold: float) -> int:
    return int(np.count_nonzero(np.abs(values) < threshold))


def validate_problem(spec: ProblemSpec) -> list[Violation]:
    """
    Check the well-posedness hypotheses for the spec's mode.

    Errors:
        g_lower_bound       |g(x,v,T)| >= g0 (inverse modes)
        psi_trace           psi = mu(., T) = 0 on gamma_minus (analytic psi on the
                            faces, gridded psi by extrapolation)
        zero_data           mu, phi, h vanish (inverse modes)
        compatibility       phi = mu(., 0) on gamma_minus (forward mode)
        u0_lower_bound      |u0(x,v,T)| >= u_min (absorption mode)

    Warnings:
        flight_time         L / v0 < T
        explicit_scattering dt * sup|J| * meas(V) < 1
        sigma_lower_bound   |Sigma(x,v,T)| >= sigma0 (source mode)
        absorption_source   F does not vanish (absorption mode)

    Args:
        spec: Built problem.

    Returns:
        Violations found; empty when every check passes.
    """
    grid = spec.grid
    sampled = spec.fields
    thresholds = spec.thresholds
    violations: list[Violation] = []

    if not grid.flight_time_ok:
        violations.append(
            Violation(
                "flight_time",
                f"flight time L/v0 = {spec.geometry.flight_time:g} is not below T = {spec.geometry.T:g}",
                Severity.WARNING,
            )
        )

    scattering_load = grid.dt * float(np.max(np.abs(sampled.J))) * spec.geometry.velocity_measure
    if scattering_load >= 1.0:
        violations.append(
            Violation(
                "explicit_scattering",
                f"dt * sup|J| * meas(V) = {scattering_load:g} >= 1; explicit scattering may be unstable",
                Severity.WARNING,
            )
        )

    if spec.mode is Mode.FORWARD:
        gap = float(np.max(np.abs(sampled.phi_trace - sampled.mu[0])))
        if gap > PSI_TRACE_TOL:
            violations.append(
                Violation("compatibility", f"compatibility phi=mu(·,0) fails (max gap {gap:g})")
            )
        return violations

    below = _count_below(sampled.g[-1], thresholds.g0)
    if below:
        violations.append(
            Violation("g_lower_bound", f"|g(x,v,T)| < g0 = {thresholds.g0:g} at {below} node(s)")
        )

    if sampled.psi is not None:
        if sampled.psi_trace is not None:
            trace, slack = sampled.psi_trace, 0.0
        else:
            trace, variation = extrapolate_face_trace(sampled.psi, grid)
            slack = PSI_TRACE_SLOPES * variation
        mismatch = np.abs(trace - sampled.mu[-1])
        gap = float(np.max(mismatch))
        if np.any(mismatch > slack + PSI_TRACE_TOL):
            violations.append(
                Violation("psi_trace", f"psi nonzero on gamma_minus (max {gap:g})")
            )

    for name, values in (("mu", sampled.mu), ("phi", sampled.phi), ("h", sampled.h)):
        if np.any(values != 0.0):
            violations.append(
                Violation("zero_data", f"{name} must vanish in inverse modes")
            )

    if spec.mode is Mode.INVERSE_SOURCE:
        below = _count_below(sampled.sigma[-1], thresholds.sigma0)
        if below:
            violations.append(
                Violation(
                    "sigma_lower_bound",
                    f"|Sigma(x,v,T)| < sigma0 at {below} node(s); "
                    "final-time operator form is undefined there",
                    Severity.WARNING,
                )
            )
    else:
        below = _count_below(sampled.u0[-1], thresholds.u_min)
        if below:
            violations.append(
                Violation(
                    "u0_lower_bound",
                    f"|u0(x,v,T)| < u_min = {thresholds.u_min:g} at {below} node(s)",
                )
            )
        if sampled.F is None or not np.any(sampled.F != 0.0):
            violations.append(
                Violation(
                    "absorption_source",
                    "F vanishes: with zero data the absorption problem only admits u = 0",
                    Severity.WARNING,
                )
            )

    return violations


def error_violations(violations: list[Violation]) -> list[Violation]:
    """Only the error-severity entries."""
    return [v for v in violations if v.severity is Severity.ERROR]


def describe(error: KinvError) -> str:
    """One-line description of a config or validation failure, with its violations."""
    lines = [str(error)]
    for violation in getattr(error, "violations", []):
        lines.append(f"  - {violation}")
    return "\n".join(lines)
