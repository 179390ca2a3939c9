"""
Constants for the kinetic transport solver suite.

This module contains:
- Expression language vocabulary
- Numerical guards and thresholds
- Binary dump format
- Run artifact file names
- CLI exit codes
"""

# =============================================================================
# EXPRESSION LANGUAGE
# =============================================================================

# Free variables an expression may bind (vp = integration velocity v')
EXPRESSION_VARIABLES = frozenset(["x", "v", "t", "vp"])

# Geometry symbols, always bound from the problem geometry
GEOMETRY_SYMBOLS = frozenset(["L", "T", "v0", "v1"])

# Named constants folded into the AST at parse time
NAMED_CONSTANTS = {
    "pi": 3.141592653589793,
    "e": 2.718281828459045,
}

# Unary functions the evaluator understands
EXPRESSION_FUNCTIONS = frozenset(["sin", "cos", "exp", "sqrt", "abs"])


# =============================================================================
# NUMERICAL GUARDS
# =============================================================================

# Forward march aborts once a time level exceeds this sup norm
BLOWUP_LIMIT = 1e12

# Consecutive residual increases that count as divergence
DIVERGENCE_STREAK = 3

# Backtracking line search: halve until the multiplier drops below this
LINE_SEARCH_FLOOR = 2.0**-10

# Dense discrete inverse maps above this condition number are rejected
CONDITION_LIMIT = 1e12

# Tolerance for psi vanishing on the inflow boundary
PSI_TRACE_TOL = 1e-12

# A gridded psi may miss zero on its inflow face by this many one-cell
# variations before the boundary check flags it
PSI_TRACE_SLOPES = 2.0

# Columns per batched linearized solve during dense Jacobian assembly.
# Fixed (not derived from the worker count) so results do not depend on it.
JACOBIAN_CHUNK = 64


# =============================================================================
# BINARY DUMP FORMAT
# =============================================================================

DUMP_MAGIC = "TIVP1"


# =============================================================================
# RUN ARTIFACTS (file names inside a run's output directory)
# =============================================================================

MANIFEST_FILENAME = "manifest.json"
STATE_DUMP_FILENAME = "u.bin"
NORMS_FILENAME = "norms.json"
PICARD_REPORT_FILENAME = "picard_report.json"
CONTROL_CSV_FILENAME = "control.csv"
CONTROL_DUMP_FILENAME = "control.bin"
NEWTON_REPORT_FILENAME = "newton_report.json"
RESIDUAL_HISTORY_FILENAME = "residual_history.csv"
VERIFY_SUMMARY_FILENAME = "summary.json"
DENSE_MATRIX_FILENAME = "dense_matrix.bin"


# =============================================================================
# CLI EXIT CODES (stable across versions)
# =============================================================================

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_IO = 4
