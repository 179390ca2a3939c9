"""Tests for transport.expressions: parsing, printing and evaluation."""

import numpy as np
import pytest

from transport.errors import (
    ExpressionDomainError,
    ExpressionSyntaxError,
    UnboundVariableError,
    UnknownNameError,
)
from transport.expressions import (
    BinOp,
    Call,
    Const,
    Neg,
    Var,
    eval_expression,
    free_variables,
    geometry_bindings,
    parse_expression,
    to_text,
)
from transport.grid import Geometry


class TestParseExpression:
    """Tests for parse_expression function."""

    def test_precedence(self):
        """* binds tighter than +."""
        ast = parse_expression("x*v + sin(t)")
        assert ast == BinOp("+", BinOp("*", Var("x"), Var("v")), Call("sin", Var("t")))

    def test_left_associative_minus(self):
        """a - b - c groups as (a - b) - c."""
        assert parse_expression("x - v - t") == BinOp("-", BinOp("-", Var("x"), Var("v")), Var("t"))

    def test_power_right_associative(self):
        """2^3^2 is 2^(3^2) = 512."""
        assert eval_expression(parse_expression("2^3^2"), {}) == 512.0

    def test_unary_minus_below_power(self):
        """-2^2 is -(2^2)."""
        assert parse_expression("-2^2") == Neg(BinOp("^", Const(2.0), Const(2.0)))

    def test_named_constants(self):
        """pi and e fold into named constants."""
        assert parse_expression("pi") == Const(np.pi, "pi")

    def test_scientific_notation(self):
        """Numbers accept exponents."""
        assert parse_expression("1.5e-3") == Const(1.5e-3)

    def test_syntax_error_position(self):
        """'x +* v' fails at the offending operator."""
        with pytest.raises(ExpressionSyntaxError) as excinfo:
            parse_expression("x +* v")
        assert excinfo.value.position == 3

    def test_unbalanced_parenthesis(self):
        """Missing ')' is a syntax error."""
        with pytest.raises(ExpressionSyntaxError, match="expected"):
            parse_expression("sin(x")

    @pytest.mark.parametrize("text", ["y + 1", "foo(x)", "sinh(x)"])
    def test_unknown_names(self, text: str):
        """Identifiers outside the language are rejected."""
        with pytest.raises(UnknownNameError):
            parse_expression(text)

    def test_geometry_symbols_are_variables(self):
        """L, T, v0, v1 parse as variables bound from the geometry."""
        assert free_variables(parse_expression("x/L + v0*T - v1")) == {"x", "L", "v0", "T", "v1"}


class TestToText:
    """Tests for to_text printing."""

    @pytest.mark.parametrize(
        "text",
        [
            "x*v + sin(t)",
            "-2^-3",
            "0.1*sin(pi*x/L)*(1 + 0.5*v/v1)",
            "exp(-t) - abs(vp - v)/sqrt(2)",
            "1e-12 + e",
        ],
    )
    def test_reparse_identity(self, text: str):
        """Printing then parsing returns the same AST."""
        ast = parse_expression(text)
        assert parse_expression(to_text(ast)) == ast


class TestEvalExpression:
    """Tests for eval_expression function."""

    def test_product(self):
        """x*v at (2, 3) is 6."""
        assert eval_expression(parse_expression("x*v"), {"x": 2.0, "v": 3.0}) == 6.0

    def test_functions(self):
        """exp(0) + cos(0) is 2."""
        assert eval_expression(parse_expression("exp(0)+cos(0)"), {}) == 2.0

    def test_returns_float_for_scalars(self):
        """Scalar bindings give a plain float."""
        assert isinstance(eval_expression(parse_expression("x"), {"x": 1}), float)

    def test_division_by_zero(self):
        """1/x at x = 0 is a domain error."""
        with pytest.raises(ExpressionDomainError, match="division"):
            eval_expression(parse_expression("1/x"), {"x": 0.0})

    def test_sqrt_negative(self):
        """sqrt(-1) is a domain error."""
        with pytest.raises(ExpressionDomainError, match="sqrt"):
            eval_expression(parse_expression("sqrt(-1)"), {})

    def test_overflow(self):
        """Non-finite results are domain errors."""
        with pytest.raises(ExpressionDomainError):
            eval_expression(parse_expression("exp(x)"), {"x": 1000.0})

    def test_unbound_variable(self):
        """Evaluating without a binding raises."""
        with pytest.raises(UnboundVariableError, match="t"):
            eval_expression(parse_expression("x + t"), {"x": 1.0})

    def test_vectorized(self):
        """Array bindings broadcast against each other."""
        result = eval_expression(
            parse_expression("x*v"),
            {"x": np.array([[1.0], [2.0]]), "v": np.array([1.0, 2.0, 3.0])},
        )
        np.testing.assert_array_equal(result, [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])

    def test_matches_reference_evaluator(self, rng):
        """Random expression trees agree with direct numpy evaluation."""
        ops = {"+": np.add, "-": np.subtract, "*": np.multiply}
        bindings = {"x": 0.3, "v": -1.7, "t": 0.9}

        def grow(depth):
            if depth == 0 or rng.random() < 0.2:
                if rng.random() < 0.5:
                    name = str(rng.choice(list(bindings)))
                    return name, bindings[name]
                value = float(np.round(rng.uniform(-2, 2), 3))
                return repr(value), value
            if rng.random() < 0.25:
                text, value = grow(depth - 1)
                return f"cos({text})", np.cos(value)
            op = str(rng.choice(list(ops)))
            left_text, left = grow(depth - 1)
            right_text, right = grow(depth - 1)
            return f"({left_text}) {op} ({right_text})", ops[op](left, right)

        for _ in range(100):
            text, expected = grow(4)
            assert eval_expression(parse_expression(text), bindings) == pytest.approx(expected)


class TestGeometryBindings:
    """Tests for geometry_bindings function."""

    def test_binds_all_symbols(self):
        """L, T, v0, v1 come from the geometry."""
        bindings = geometry_bindings(Geometry(L=2.0, v0=1.0, v1=3.0, T=4.0))
        assert bindings == {"L": 2.0, "T": 4.0, "v0": 1.0, "v1": 3.0}
