"""
Command-line entry point for the kinetic transport solver suite.

Runs forward solves, inverse reconstructions and verification suites from a
problem config, writing every artifact plus a manifest into one output
directory.

Usage:
    uv run kinv forward --config config/examples/mms_advection.json
    uv run kinv inverse --config config/examples/absorption_inverse.json --out runs/absorption
    uv run kinv verify --suite oracle --config config/examples/tiny_linear_inverse.json
    uv run kinv verify --suite alpha --threads 2

Exit codes: 0 ok, 2 config/validation failure, 3 solver failure or failed
verification, 4 I/O failure. Set KINV_LOG=debug for per-iteration residuals.
"""

import argparse
import logging
import os
import sys
import time
from collections.abc import Callable
from pathlib import Path

import numpy as np
import polars as pl
from tqdm import tqdm

from transport.alpha import AlphaFamily, AlphaSpec, check_alpha
from transport.artifacts import ArtifactWriter, RunManifest, RunStatus
from transport.errors import (
    ConfigError,
    ExpressionDomainError,
    FieldError,
    LineSearchError,
    SolverError,
    ValidationError,
)
from transport.fields import GridFunction2, GridFunction3, norms, slice_frame, sup_norm
from transport.inverse import random_psi_family, solve_inverse, stability_estimate
from transport.linear import apriori_ratio, solve_linear_forward
from transport.nonlinear import apply_S, solve_nonlinear_forward
from transport.oracle import MMS_NAMES, assemble_dense, convergence_study, naive_apply_S, oracle_inverse
from transport.problem import Mode, ProblemSpec, describe, load_problem
from utils.constants import (
    CONTROL_CSV_FILENAME,
    CONTROL_DUMP_FILENAME,
    DENSE_MATRIX_FILENAME,
    EXIT_IO,
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_VALIDATION,
    NEWTON_REPORT_FILENAME,
    NORMS_FILENAME,
    PICARD_REPORT_FILENAME,
    RESIDUAL_HISTORY_FILENAME,
    STATE_DUMP_FILENAME,
    VERIFY_SUMMARY_FILENAME,
)
from utils.formatting import format_duration, format_history
from utils.paths import get_log_level, get_run_dir
from utils.solver_config import get_verify_defaults

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Verification thresholds
# -----------------------------------------------------------------------------

# Observed-order window for the first-order scheme on MMS cases 1-3
MMS_ORDER_RANGE = (0.7, 1.3)

# Exactly representable MMS solutions must reproduce to this level
MMS_EXACT_TOL = 1e-12

# Dense and Newton inverse paths must agree entrywise to this level
ORACLE_AGREEMENT_TOL = 1e-8

# Fast and naive S evaluations must agree to this level
NAIVE_S_TOL = 1e-12

# The naive S loop is O(n^2) in grid points; skip it above this many
NAIVE_S_LIMIT = 512

# Scale used for the built-in families in the alpha battery
ALPHA_SUITE_SCALE = 1.0

BASIN_GUIDANCE = "outside local basin: reduce psi magnitude"

SUITES = ("mms", "oracle", "stability", "alpha")

EXIT_CODES = {
    RunStatus.OK: EXIT_OK,
    RunStatus.VALIDATION_FAILED: EXIT_VALIDATION,
    RunStatus.SOLVER_FAILED: EXIT_SOLVER,
    RunStatus.IO_FAILED: EXIT_IO,
}


class VerificationFailed(Exception):
    """A verify suite ran to completion but a hard assertion failed."""


# -----------------------------------------------------------------------------
# Shared helpers
# -----------------------------------------------------------------------------


def _header(title: str, lines: list[str]) -> None:
    logger.info("=" * 60)
    logger.info(title)
    logger.info("=" * 60)
    for line in lines:
        logger.info(line)
    logger.info("=" * 60)


def _tolerances(spec: ProblemSpec | None) -> dict:
    if spec is None:
        return {}
    config = spec.to_config()
    return {"solver": config["solver"], "thresholds": config["thresholds"], "verify": config["verify"]}


def _load(config_path: Path | None, strict: bool, manifest: RunManifest, required: bool = True):
    if config_path is None:
        if required:
            raise ConfigError(f"{manifest.command} needs --config")
        return None
    spec = load_problem(config_path, strict=strict or None)
    manifest.tolerances = _tolerances(spec)
    return spec


def execute(
    command: str,
    config_path: Path | None,
    output_dir: Path,
    body: Callable[[ArtifactWriter, RunManifest], None],
) -> int:
    """
    Run one command body and always finish with a manifest.

    Maps failures onto run statuses: config and validation problems to
    validation_failed, solver errors and failed verifications to
    solver_failed, file system errors to io_failed.

    Args:
        command: Command name recorded in the manifest.
        config_path: Problem config, if any.
        output_dir: Artifact directory.
        body: Does the work; writes artifacts and fills manifest.results.

    Returns:
        Process exit code.
    """
    start = time.perf_counter()
    writer = ArtifactWriter(output_dir)
    manifest = RunManifest(command=command, config_path=config_path, output_dir=output_dir)

    try:
        body(writer, manifest)
    except (ConfigError, ValidationError, FieldError, ExpressionDomainError) as e:
        message = describe(e)
        logger.error(message)
        manifest.exit_status = RunStatus.VALIDATION_FAILED
        manifest.message = message
    except LineSearchError as e:
        logger.error(f"{e} ({BASIN_GUIDANCE})")
        manifest.exit_status = RunStatus.SOLVER_FAILED
        manifest.message = f"{e} ({BASIN_GUIDANCE})"
    except (SolverError, VerificationFailed) as e:
        logger.error(str(e))
        manifest.exit_status = RunStatus.SOLVER_FAILED
        manifest.message = str(e)
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        manifest.exit_status = RunStatus.IO_FAILED
        manifest.message = str(e)

    manifest.wall_time = time.perf_counter() - start
    try:
        path = writer.manifest(manifest)
    except OSError as e:
        logger.error(f"Could not write manifest: {e}")
        return EXIT_IO

    logger.info(f"Status: {manifest.exit_status} in {format_duration(manifest.wall_time)}")
    logger.info(f"Manifest: {path}")
    return EXIT_CODES[manifest.exit_status]


# -----------------------------------------------------------------------------
# forward
# -----------------------------------------------------------------------------


def cmd_forward(config_path: Path, output_dir: Path, strict: bool = False) -> int:
    """Solve the direct problem and write u, its norms and the Picard report."""

    def body(writer: ArtifactWriter, manifest: RunManifest) -> None:
        spec = _load(config_path, strict, manifest)
        if spec.mode is not Mode.FORWARD:
            raise ConfigError(f"kinv forward needs mode 'forward', config has '{spec.mode}'")
        _header(
            "Forward solve",
            [
                f"Config: {config_path}",
                f"Grid:   Nx={spec.grid.Nx} Nv={spec.grid.Nv} Nt={spec.grid.Nt}",
                f"Alpha:  {spec.alpha.family} (c={spec.alpha.c:g})",
                f"Output: {output_dir}",
            ],
        )

        F = GridFunction3(spec.grid, spec.fields.F)
        if spec.is_linear:
            result = solve_linear_forward(spec, F)
            u, ratio, report = result.u, result.apriori_ratio, None
        else:
            u, report = solve_nonlinear_forward(spec, F)
            ratio = apriori_ratio(
                u,
                F,
                GridFunction2(spec.grid, spec.fields.phi),
                spec.fields.mu,
                GridFunction3(spec.grid, spec.fields.sigma),
                GridFunction3(spec.grid, spec.fields.u0),
            )

        writer.dump(STATE_DUMP_FILENAME, u.values)
        writer.json(NORMS_FILENAME, {**norms(u).to_dict(), "apriori_ratio": ratio})
        manifest.results = {"sup_u": sup_norm(u), "apriori_ratio": ratio}

        if report is not None:
            writer.json(PICARD_REPORT_FILENAME, report.to_dict())
            manifest.results["picard_iterations"] = report.iterations
            logger.info(f"Picard residuals: {format_history(report.residual_history)}")

        if spec.fields.exact_u is not None:
            error = float(np.max(np.abs(u.values - spec.fields.exact_u)))
            manifest.results["error_vs_exact"] = error
            logger.info(f"Sup error vs exact.u: {error:.3e}")

        logger.info(f"sup|u| = {manifest.results['sup_u']:.6e}, a priori ratio = {ratio:.3e}")

    return execute("forward", config_path, output_dir, body)


# -----------------------------------------------------------------------------
# inverse
# -----------------------------------------------------------------------------


def cmd_inverse(
    config_path: Path,
    output_dir: Path,
    strict: bool = False,
    threads: int | None = None,
) -> int:
    """Recover the control from psi and write it with the Newton history."""

    def body(writer: ArtifactWriter, manifest: RunManifest) -> None:
        spec = _load(config_path, strict, manifest)
        if not spec.mode.is_inverse:
            raise ConfigError("kinv inverse needs mode 'inverse_source' or 'inverse_absorption'")
        _header(
            "Inverse solve",
            [
                f"Config: {config_path}",
                f"Mode:   {spec.mode}",
                f"Grid:   Nx={spec.grid.Nx} Nv={spec.grid.Nv} Nt={spec.grid.Nt}",
                f"Output: {output_dir}",
            ],
        )

        psi = GridFunction2(spec.grid, spec.fields.psi)
        try:
            solution = solve_inverse(spec, psi, workers=threads)
        except SolverError as e:
            report = getattr(e, "report", None)
            if report is not None and hasattr(report, "to_dict"):
                writer.json(NEWTON_REPORT_FILENAME, report.to_dict())
            raise

        report = solution.report
        writer.csv(CONTROL_CSV_FILENAME, slice_frame(solution.control))
        writer.dump(CONTROL_DUMP_FILENAME, solution.control.values)
        writer.dump(STATE_DUMP_FILENAME, solution.state.values)
        writer.json(NEWTON_REPORT_FILENAME, report.to_dict())
        writer.csv(
            RESIDUAL_HISTORY_FILENAME,
            pl.DataFrame(
                {
                    "iteration": list(range(report.iterations + 1)),
                    "residual": [report.initial_residual, *report.residual_history],
                }
            ),
        )

        manifest.results = {
            "newton_iterations": report.iterations,
            "final_residual": report.final_residual,
            "sup_control": sup_norm(solution.control),
        }
        if spec.fields.exact_control is not None:
            exact = spec.fields.exact_control
            error = float(np.max(np.abs(solution.control.values - exact)))
            scale = float(np.max(np.abs(exact)))
            manifest.results["control_error"] = error
            manifest.results["control_relative_error"] = error / scale if scale > 0 else error
            logger.info(f"Sup error vs exact.control: {error:.3e}")

        history = [report.initial_residual, *report.residual_history]
        logger.info(f"Newton residuals: {format_history(history)}")

    return execute("inverse", config_path, output_dir, body)


# -----------------------------------------------------------------------------
# verify suites
# -----------------------------------------------------------------------------


def _suite_alpha(spec: ProblemSpec | None, writer: ArtifactWriter, manifest: RunManifest) -> bool:
    families = [AlphaSpec(family, ALPHA_SUITE_SCALE) for family in AlphaFamily]
    if spec is not None and not spec.alpha.is_zero and spec.alpha not in families:
        families.append(spec.alpha)
    seed = spec.verify.seed if spec is not None else get_verify_defaults()["seed"]

    checks = [check_alpha(family, seed=seed) for family in tqdm(families, desc="alpha families")]
    rows = [check.to_dict() for check in checks]
    table = pl.DataFrame([{k: v for k, v in row.items() if k != "failures"} for row in rows])
    writer.csv("alpha_checks.csv", table)
    for check in checks:
        for failure in check.failures:
            logger.error(f"{check.spec.family}: {failure}")

    manifest.results["alpha"] = rows
    return all(check.passed for check in checks)


def _suite_mms(spec: ProblemSpec | None, writer: ArtifactWriter, manifest: RunManifest) -> bool:
    refinements = spec.verify.refinements if spec is not None else get_verify_defaults()["refinements"]
    passed = True
    summary = {}

    for case_id in tqdm(sorted(MMS_NAMES), desc="MMS cases"):
        table = convergence_study(case_id, refinements=refinements)
        name = MMS_NAMES[case_id]
        writer.csv(f"mms_{name}.csv", table)

        orders = [o for o in table["order"].to_list() if o is not None]
        errors = table["error"].to_list()
        if name == "constant":
            ok = max(errors) <= MMS_EXACT_TOL
        else:
            low, high = MMS_ORDER_RANGE
            ok = bool(orders) and all(low <= o <= high for o in orders)
        if not ok:
            logger.error(f"MMS case {case_id} ({name}) failed: errors {errors}, orders {orders}")
        passed = passed and ok
        summary[name] = {"errors": errors, "orders": orders, "passed": ok}

    manifest.results["mms"] = summary
    return passed


def _suite_oracle(
    spec: ProblemSpec, writer: ArtifactWriter, manifest: RunManifest, threads: int | None
) -> bool:
    results = {}
    passed = True
    grid = spec.grid

    points = grid.Nx * grid.Nv * (grid.Nt + 1)
    if points <= NAIVE_S_LIMIT:
        rng = np.random.default_rng(spec.verify.seed)
        u = GridFunction3(grid, rng.normal(size=grid.shape3))
        gap = float(np.max(np.abs(apply_S(u, spec).values - naive_apply_S(u.values, spec))))
        results["naive_S_gap"] = gap
        passed = gap <= NAIVE_S_TOL
        logger.info(f"Fast vs naive S: max gap {gap:.3e}")
    else:
        logger.info(f"Skipping naive S check ({points} grid points > {NAIVE_S_LIMIT})")

    if spec.is_linear and spec.mode.is_inverse:
        psi = GridFunction2(grid, spec.fields.psi)
        system = assemble_dense(spec, workers=threads)
        writer.dump(DENSE_MATRIX_FILENAME, system.matrix)
        dense = oracle_inverse(spec, psi, system)
        newton = solve_inverse(spec, psi, workers=threads).control

        difference = newton.values - dense.values
        discrepancy = float(np.max(np.abs(difference)))
        frame = slice_frame(newton).rename({"value": "newton"}).with_columns(
            pl.Series("dense", dense.values.reshape(-1)),
            pl.Series("difference", difference.reshape(-1)),
        )
        writer.csv("oracle_comparison.csv", frame)
        results.update({"condition_number": system.conditioning, "max_discrepancy": discrepancy})
        logger.info(
            f"Dense vs Newton inverse: max discrepancy {discrepancy:.3e} "
            f"(condition number {system.conditioning:.3e})"
        )
        passed = passed and discrepancy <= ORACLE_AGREEMENT_TOL
    else:
        logger.info("Skipping dense inverse comparison (needs a linear inverse-mode config)")

    manifest.results["oracle"] = results
    return passed


def _suite_stability(
    spec: ProblemSpec, writer: ArtifactWriter, manifest: RunManifest, threads: int | None
) -> bool:
    family = random_psi_family(spec, spec.verify.family_size, spec.verify.seed)
    estimate = stability_estimate(spec, family, workers=threads)
    writer.csv(
        "stability_ratios.csv",
        pl.DataFrame(
            {"member": list(range(len(estimate.ratios))), "ratio": list(estimate.ratios)},
            schema={"member": pl.Int64, "ratio": pl.Float64},
        ),
    )
    manifest.results["stability"] = {
        "c_bar": estimate.c_bar,
        "members": len(estimate.ratios),
        "skipped": [list(entry) for entry in estimate.skipped],
    }
    logger.info(f"Empirical stability constant C = {estimate.c_bar:.6e} over {len(family)} members")
    return bool(np.isfinite(estimate.c_bar))


def cmd_verify(
    suite: str,
    config_path: Path | None,
    output_dir: Path,
    strict: bool = False,
    threads: int | None = None,
) -> int:
    """Run one verification suite and write its tables and pass/fail summary."""

    def body(writer: ArtifactWriter, manifest: RunManifest) -> None:
        spec = _load(config_path, strict, manifest, required=suite in ("oracle", "stability"))
        _header(
            f"Verify: {suite}",
            [f"Config: {config_path or '(built-in)'}", f"Output: {output_dir}"],
        )

        if suite == "alpha":
            passed = _suite_alpha(spec, writer, manifest)
        elif suite == "mms":
            passed = _suite_mms(spec, writer, manifest)
        elif suite == "oracle":
            passed = _suite_oracle(spec, writer, manifest, threads)
        else:
            passed = _suite_stability(spec, writer, manifest, threads)

        writer.json(VERIFY_SUMMARY_FILENAME, {"suite": suite, "passed": passed, **manifest.results})
        logger.info(f"Suite {suite}: {'PASS' if passed else 'FAIL'}")
        if not passed:
            raise VerificationFailed(f"verify suite '{suite}' failed")

    return execute(f"verify-{suite}", config_path, output_dir, body)


# -----------------------------------------------------------------------------
# CLI
# -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with forward, inverse and verify subcommands."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=Path,
        default=None,
        help="Problem config (JSON, or YAML)",
    )
    common.add_argument(
        "--out",
        type=Path,
        default=None,
        help="Output directory (default: $KINV_OUTPUT_DIR/<command>/<config stem>)",
    )
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (default: available cores); results do not depend on it",
    )
    common.add_argument(
        "--strict",
        action="store_true",
        help="Escalate hypothesis violations to errors",
    )

    parser = argparse.ArgumentParser(
        prog="kinv",
        description="Forward and inverse solvers for the nonlinear kinetic transport equation",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    forward = commands.add_parser("forward", parents=[common], help="Solve the direct problem")
    inverse = commands.add_parser("inverse", parents=[common], help="Recover f or sigma from psi")
    verify = commands.add_parser("verify", parents=[common], help="Run a verification suite")
    verify.add_argument("--suite", choices=SUITES, required=True, help="Suite to run")

    for sub in (forward, inverse):
        sub.set_defaults(suite=None)
    return parser


def run(argv: list[str] | None = None) -> int:
    """
    Parse arguments and run one command.

    Args:
        argv: Argument list (default: sys.argv[1:]).

    Returns:
        Process exit code.
    """
    args = build_parser().parse_args(argv)

    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be at least 1")
        return EXIT_VALIDATION
    threads = args.threads or os.cpu_count() or 1

    if args.command in ("forward", "inverse") and args.config is None:
        logger.error(f"kinv {args.command} needs --config")
        return EXIT_VALIDATION

    run_name = args.command if args.suite is None else f"verify-{args.suite}"
    output_dir = args.out or get_run_dir(run_name, args.config)

    if args.command == "forward":
        return cmd_forward(args.config, output_dir, strict=args.strict)
    if args.command == "inverse":
        return cmd_inverse(args.config, output_dir, strict=args.strict, threads=threads)
    return cmd_verify(args.suite, args.config, output_dir, strict=args.strict, threads=threads)


def main() -> None:
    """Main entry point for the kinv command."""
    logging.basicConfig(
        level=get_log_level(),
        format="%(asctime)s | %(levelname)-8s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    sys.exit(run())


if __name__ == "__main__":
    main()
