"""
Built-in nonlinearity families alpha(u) for the perturbation term S(u).

Each family is twice continuously differentiable with alpha(0) = alpha'(0) = 0
and carries certified constants:

    |alpha(u)| <= C1 |u|,   |alpha'(u)| <= C1,   |alpha''(u)| <= C2

Families:
    zero                 alpha = 0
    softabs(c)           alpha = c (sqrt(1 + u^2) - 1)
    cubic_saturating(c)  alpha = c u^3 / (1 + u^2)
"""

from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from transport.errors import ConfigError


class AlphaFamily(StrEnum):
    ZERO = "zero"
    SOFTABS = "softabs"
    CUBIC_SATURATING = "cubic_saturating"


# Bound multipliers per unit scale c.
# cubic_saturating: sup|alpha'| = 9/8 at u^2 = 3; sup|alpha''| ~ 1.457 rounded up to 1.5
_C1_PER_SCALE = {
    AlphaFamily.ZERO: 0.0,
    AlphaFamily.SOFTABS: 1.0,
    AlphaFamily.CUBIC_SATURATING: 1.125,
}
_C2_PER_SCALE = {
    AlphaFamily.ZERO: 0.0,
    AlphaFamily.SOFTABS: 1.0,
    AlphaFamily.CUBIC_SATURATING: 1.5,
}


@dataclass(frozen=True)
class AlphaSpec:
    """
    Nonlinearity family with its scale.

    Args:
        family: One of zero, softabs, cubic_saturating.
        c: Positive scale (ignored for the zero family).
    """

    family: AlphaFamily = AlphaFamily.ZERO
    c: float = 0.0

    @property
    def C1(self) -> float:
        """Bound on |alpha(u)|/|u| and |alpha'(u)|."""
        return _C1_PER_SCALE[self.family] * self.c

    @property
    def C2(self) -> float:
        """Bound on |alpha''(u)|."""
        return _C2_PER_SCALE[self.family] * self.c

    @property
    def is_zero(self) -> bool:
        """True when alpha vanishes identically."""
        return self.family == AlphaFamily.ZERO or self.c == 0.0

    def to_config(self) -> dict:
        """Config block {"family", "c"}."""
        return {"family": str(self.family), "c": self.c}


def alpha_from_config(block: dict | None) -> AlphaSpec:
    """
    Build an AlphaSpec from a config block.

    Args:
        block: {"family": name, "c": scale} or None for the zero family.

    Returns:
        AlphaSpec.

    Raises:
        ConfigError: On an unknown family or a non-positive scale.
    """
    if block is None:
        return AlphaSpec()
    if not isinstance(block, dict) or "family" not in block:
        raise ConfigError("coefficients.alpha must be an object with a 'family' key")

    try:
        family = AlphaFamily(block["family"])
    except ValueError:
        choices = ", ".join(f.value for f in AlphaFamily)
        raise ConfigError(
            f"unknown alpha family {block['family']!r} (expected one of: {choices})"
        ) from None

    if family == AlphaFamily.ZERO:
        return AlphaSpec()

    c = block.get("c")
    if not isinstance(c, (int, float)) or isinstance(c, bool) or not c > 0:
        raise ConfigError(f"coefficients.alpha.c must be a positive number, got {c!r}")
    return AlphaSpec(family=family, c=float(c))


def alpha_values(spec: AlphaSpec, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorized alpha, alpha' and alpha''.

    Args:
        spec: Nonlinearity family.
        u: Array of arguments.

    Returns:
        (alpha(u), alpha'(u), alpha''(u)), each shaped like u.
    """
    u = np.asarray(u, dtype=np.float64)
    c = spec.c

    if spec.is_zero:
        zeros = np.zeros_like(u)
        return zeros, zeros.copy(), zeros.copy()

    if spec.family == AlphaFamily.SOFTABS:
        root = np.sqrt(1.0 + u * u)
        # u^2 / (root + 1) equals root - 1 without cancellation near u = 0
        value = c * (u * u) / (root + 1.0)
        first = c * u / root
        second = c / root**3
        return value, first, second

    # cubic_saturating
    s = 1.0 + u * u
    value = c * u**3 / s
    first = c * u * u * (u * u + 3.0) / s**2
    second = c * 2.0 * u * (3.0 - u * u) / s**3
    return value, first, second


def alpha_eval(spec: AlphaSpec, u: float) -> tuple[float, float, float]:
    """
    Evaluate alpha and its first two derivatives at a point.

    Args:
        spec: Nonlinearity family.
        u: Argument.

    Returns:
        (alpha(u), alpha'(u), alpha''(u)).
    """
    value, first, second = alpha_values(spec, np.asarray(u, dtype=np.float64))
    return float(value), float(first), float(second)


def alpha(spec: AlphaSpec, u: np.ndarray) -> np.ndarray:
    """alpha(u) only."""
    return alpha_values(spec, u)[0]


def alpha_prime(spec: AlphaSpec, u: np.ndarray) -> np.ndarray:
    """alpha'(u) only."""
    return alpha_values(spec, u)[1]


@dataclass(frozen=True)
class AlphaCheck:
    """Outcome of the sampled bound and derivative battery for one family."""

    spec: AlphaSpec
    samples: int
    max_value_ratio: float
    max_first: float
    max_second: float
    max_fd_error_first: float
    max_fd_error_second: float
    passed: bool
    failures: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "family": str(self.spec.family),
            "c": self.spec.c,
            "C1": self.spec.C1,
            "C2": self.spec.C2,
            "samples": self.samples,
            "max_value_ratio": self.max_value_ratio,
            "max_first": self.max_first,
            "max_second": self.max_second,
            "max_fd_error_first": self.max_fd_error_first,
            "max_fd_error_second": self.max_fd_error_second,
            "passed": self.passed,
            "failures": list(self.failures),
        }


def check_alpha(
    spec: AlphaSpec,
    samples: int = 10_000,
    seed: int = 0,
    fd_step: float = 1e-5,
    fd_rtol: float = 1e-6,
) -> AlphaCheck:
    """
    Check the certified bounds and closed-form derivatives on random samples.

    Bounds are checked on u spread log-uniformly over [-1e6, 1e6] (plus u = 0).
    Derivatives are compared with central differences on |u| <= 10, where the
    difference quotient is well resolved.

    Args:
        spec: Nonlinearity family.
        samples: Number of sampled u values.
        seed: Random seed.
        fd_step: Central-difference step.
        fd_rtol: Relative tolerance for derivative agreement.

    Returns:
        AlphaCheck with the measured maxima and a pass flag.
    """
    rng = np.random.default_rng(seed)
    magnitudes = 10.0 ** rng.uniform(-6.0, 6.0, size=samples - 1)
    signs = rng.choice([-1.0, 1.0], size=samples - 1)
    u = np.concatenate([[0.0], signs * magnitudes])

    value, first, second = alpha_values(spec, u)
    nonzero = u != 0.0
    value_ratio = np.zeros_like(u)
    value_ratio[nonzero] = np.abs(value[nonzero]) / np.abs(u[nonzero])

    failures = []
    slack = 1.0 + 1e-12
    at_zero = alpha_values(spec, np.zeros(1))
    if at_zero[0][0] != 0.0 or at_zero[1][0] != 0.0:
        failures.append("alpha(0) and alpha'(0) must vanish")
    if np.max(value_ratio) > spec.C1 * slack:
        failures.append("|alpha(u)| <= C1 |u| violated")
    if np.max(np.abs(first)) > spec.C1 * slack:
        failures.append("|alpha'(u)| <= C1 violated")
    if np.max(np.abs(second)) > spec.C2 * slack:
        failures.append("|alpha''(u)| <= C2 violated")

    # Derivative consistency on a resolved range
    v = rng.uniform(-10.0, 10.0, size=min(samples, 1000))
    a_plus, d_plus, _ = alpha_values(spec, v + fd_step)
    a_minus, d_minus, _ = alpha_values(spec, v - fd_step)
    _, d_exact, dd_exact = alpha_values(spec, v)
    fd_first = (a_plus - a_minus) / (2.0 * fd_step)
    fd_second = (d_plus - d_minus) / (2.0 * fd_step)
    scale_first = np.maximum(np.abs(d_exact), spec.c if spec.c > 0 else 1.0)
    scale_second = np.maximum(np.abs(dd_exact), spec.c if spec.c > 0 else 1.0)
    error_first = float(np.max(np.abs(fd_first - d_exact) / scale_first))
    error_second = float(np.max(np.abs(fd_second - dd_exact) / scale_second))
    if error_first > fd_rtol:
        failures.append("alpha' disagrees with central differences")
    if error_second > fd_rtol:
        failures.append("alpha'' disagrees with central differences")

    return AlphaCheck(
        spec=spec,
        samples=int(u.size),
        max_value_ratio=float(np.max(value_ratio)),
        max_first=float(np.max(np.abs(first))),
        max_second=float(np.max(np.abs(second))),
        max_fd_error_first=error_first,
        max_fd_error_second=error_second,
        passed=not failures,
        failures=tuple(failures),
    )
