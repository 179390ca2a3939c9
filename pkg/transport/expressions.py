"""
Analytic expression language for problem coefficients.

Expressions are written over the variables x, v, t and vp (the integration
velocity v'), the geometry symbols L, T, v0, v1, the constants pi and e, and
the functions sin, cos, exp, sqrt, abs. Operators follow the usual precedence:
^ binds tighter than unary minus, which binds tighter than * and /, which bind
tighter than + and -. Everything is left-associative except ^.

Parsing uses precedence climbing. Evaluation is vectorized: bindings may be
scalars or numpy arrays that broadcast against each other.

Usage:
    from transport.expressions import parse_expression, eval_expression

    ast = parse_expression("0.1*sin(pi*x/L)")
    eval_expression(ast, {"x": grid.x_centers, "L": 1.0})
"""

import re
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from transport.errors import (
    ExpressionDomainError,
    ExpressionSyntaxError,
    UnboundVariableError,
    UnknownNameError,
)
from utils.constants import (
    EXPRESSION_FUNCTIONS,
    EXPRESSION_VARIABLES,
    GEOMETRY_SYMBOLS,
    NAMED_CONSTANTS,
)


# =============================================================================
# AST
# =============================================================================


@dataclass(frozen=True)
class Const:
    value: float
    name: str | None = None


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Const | Var | BinOp | Neg | Call


# =============================================================================
# TOKENIZER
# =============================================================================

_TOKEN_RE = re.compile(
    r"""
    (?P<space>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ExpressionSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = match.lastgroup
        if kind != "space":
            tokens.append(_Token(kind, match.group(), pos))
        pos = match.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


# =============================================================================
# PARSER
# =============================================================================

# Binary operators below ^, grouped by binding power (all left-associative)
_BINARY_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


class _Parser:
    def __init__(self, source: str) -> None:
        self.tokens = _tokenize(source)
        self.index = 0

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, text: str) -> _Token:
        token = self.peek()
        if token.text != text:
            shown = repr(token.text) if token.kind != "end" else "end of input"
            raise ExpressionSyntaxError(f"expected {text!r}, found {shown}", token.pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.binary(1)
        token = self.peek()
        if token.kind != "end":
            raise ExpressionSyntaxError(f"unexpected {token.text!r}", token.pos)
        return node

    def binary(self, min_prec: int) -> Node:
        left = self.unary()
        while True:
            token = self.peek()
            prec = _BINARY_PREC.get(token.text) if token.kind == "op" else None
            if prec is None or prec < min_prec:
                return left
            self.advance()
            right = self.binary(prec + 1)
            left = BinOp(token.text, left, right)

    def unary(self) -> Node:
        token = self.peek()
        if token.text == "-":
            self.advance()
            return Neg(self.unary())
        if token.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek().text == "^":
            self.advance()
            # Right-associative; exponent may carry its own sign
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        token = self.advance()
        if token.kind == "number":
            return Const(float(token.text))
        if token.kind == "name":
            return self.name(token)
        if token.text == "(":
            node = self.binary(1)
            self.expect(")")
            return node
        shown = repr(token.text) if token.kind != "end" else "end of input"
        raise ExpressionSyntaxError(f"unexpected {shown}", token.pos)

    def name(self, token: _Token) -> Node:
        name = token.text
        if name in EXPRESSION_FUNCTIONS:
            self.expect("(")
            arg = self.binary(1)
            self.expect(")")
            return Call(name, arg)
        if self.peek().text == "(":
            raise UnknownNameError(f"unknown function {name!r} at offset {token.pos}")
        if name in NAMED_CONSTANTS:
            return Const(NAMED_CONSTANTS[name], name)
        if name in EXPRESSION_VARIABLES or name in GEOMETRY_SYMBOLS:
            return Var(name)
        raise UnknownNameError(f"unknown name {name!r} at offset {token.pos}")


def parse_expression(text: str) -> Node:
    """
    Parse an expression string into an AST.

    Args:
        text: Expression source, e.g. "x*v + sin(t)".

    Returns:
        Root AST node.

    Raises:
        ExpressionSyntaxError: On malformed input (carries the character offset).
        UnknownNameError: On identifiers outside the language.
    """
    if not isinstance(text, str):
        raise ExpressionSyntaxError(f"expression must be a string, got {type(text).__name__}", 0)
    return _Parser(text).parse()


# =============================================================================
# PRINTING AND INSPECTION
# =============================================================================


def to_text(node: Node) -> str:
    """
    Print an AST as fully parenthesized source that parses back to the same AST.

    Args:
        node: AST node.

    Returns:
        Expression string.
    """
    match node:
        case Const(value, name):
            return name if name is not None else repr(float(value))
        case Var(name):
            return name
        case BinOp(op, left, right):
            return f"({to_text(left)} {op} {to_text(right)})"
        case Neg(operand):
            return f"(-{to_text(operand)})"
        case Call(func, arg):
            return f"{func}({to_text(arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def free_variables(node: Node) -> frozenset[str]:
    """
    Names of variables and geometry symbols an AST refers to.

    Args:
        node: AST node.

    Returns:
        Frozen set of names.
    """
    match node:
        case Const():
            return frozenset()
        case Var(name):
            return frozenset([name])
        case BinOp(_, left, right):
            return free_variables(left) | free_variables(right)
        case Neg(operand) | Call(_, operand):
            return free_variables(operand)
    raise TypeError(f"not an expression node: {node!r}")


# =============================================================================
# EVALUATION
# =============================================================================

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


def _finite(value, what: str):
    if not np.all(np.isfinite(value)):
        raise ExpressionDomainError(f"{what} produced a non-finite value")
    return value


def _evaluate(node: Node, bindings: Mapping):
    match node:
        case Const(value):
            return value
        case Var(name):
            try:
                return bindings[name]
            except KeyError:
                raise UnboundVariableError(f"variable {name!r} is not bound") from None
        case Neg(operand):
            return -_evaluate(operand, bindings)
        case Call(func, arg):
            value = _evaluate(arg, bindings)
            if func == "sqrt" and np.any(np.asarray(value) < 0):
                raise ExpressionDomainError("sqrt of a negative number")
            return _finite(_FUNCTIONS[func](value), func)
        case BinOp(op, left, right):
            a = _evaluate(left, bindings)
            b = _evaluate(right, bindings)
            if op == "+":
                return _finite(a + b, "addition")
            if op == "-":
                return _finite(a - b, "subtraction")
            if op == "*":
                return _finite(a * b, "multiplication")
            if op == "/":
                if np.any(np.asarray(b) == 0):
                    raise ExpressionDomainError("division by zero")
                return _finite(a / b, "division")
            return _finite(np.power(np.asarray(a, dtype=np.float64), b), "power")
    raise TypeError(f"not an expression node: {node!r}")


def eval_expression(node: Node, bindings: Mapping):
    """
    Evaluate an AST under variable bindings.

    Args:
        node: AST node.
        bindings: Map from variable name to a float or numpy array. Arrays
            broadcast against each other.

    Returns:
        float for scalar bindings, otherwise an ndarray of the broadcast shape.

    Raises:
        UnboundVariableError: If a referenced variable has no binding.
        ExpressionDomainError: On division by zero, sqrt of a negative number,
            or any non-finite intermediate.
    """
    with np.errstate(all="ignore"):
        result = _evaluate(node, bindings)
    if np.ndim(result) == 0:
        return float(result)
    return np.asarray(result, dtype=np.float64)


def geometry_bindings(geometry) -> dict[str, float]:
    """Bindings for the geometry symbols L, T, v0, v1."""
    return {
        "L": float(geometry.L),
        "T": float(geometry.T),
        "v0": float(geometry.v0),
        "v1": float(geometry.v1),
    }
