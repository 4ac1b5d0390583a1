"""Small arithmetic expression language used by scenario files.

Grammar (highest binding last)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"

Functions are sin, cos, exp and ln; ``pi`` is a constant. Variables are
fixed per expression (x1, x2, x3 by default; eps and r for scaling
families). Expressions evaluate element-wise on numpy arrays.
"""
import re
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .fib_errors import ExpressionError

SPATIAL_VARIABLES = ("x1", "x2", "x3")
FAMILY_VARIABLES = ("eps", "r")

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "ln": np.log,
}

CONSTANTS = {"pi": np.pi}

TOKEN_PATTERN = re.compile(
    r"\s*(?:(?P<number>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


class Node:
    def evaluate(self, env: Dict[str, np.ndarray]):
        raise NotImplementedError


class Number(Node):
    def __init__(self, value: float):
        self.value = value

    def evaluate(self, env):
        return self.value


class Variable(Node):
    def __init__(self, name: str):
        self.name = name

    def evaluate(self, env):
        return env[self.name]


class UnaryOp(Node):
    def __init__(self, op: str, operand: Node):
        self.op = op
        self.operand = operand

    def evaluate(self, env):
        value = self.operand.evaluate(env)
        return -value if self.op == "-" else value


class BinaryOp(Node):
    def __init__(self, op: str, left: Node, right: Node):
        self.op = op
        self.left = left
        self.right = right

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        return np.power(a, b)


class Call(Node):
    def __init__(self, name: str, argument: Node):
        self.name = name
        self.argument = argument

    def evaluate(self, env):
        return FUNCTIONS[self.name](self.argument.evaluate(env))


def tokenize(text: str) -> List[Tuple[str, str]]:
    """Split expression text into (kind, value) tokens."""
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        match = TOKEN_PATTERN.match(text, pos)
        if match is None or match.end() == pos:
            raise ExpressionError(f"Unexpected character {text[pos]!r} at position {pos} in {text!r}")
        kind = match.lastgroup
        tokens.append((kind, match.group(kind)))
        pos = match.end()
    return tokens


class Parser:
    """Recursive-descent parser producing a Node tree."""

    def __init__(self, text: str, variables: Sequence[str]):
        self.text = text
        self.variables = tuple(variables)
        self.tokens = tokenize(text)
        self.pos = 0

    def peek(self):
        if self.pos < len(self.tokens):
            return self.tokens[self.pos]
        return (None, None)

    def advance(self):
        token = self.peek()
        self.pos += 1
        return token

    def expect(self, value: str):
        kind, got = self.advance()
        if got != value:
            raise ExpressionError(f"Expected {value!r} but found {got!r} in {self.text!r}")

    def parse(self) -> Node:
        if not self.tokens:
            raise ExpressionError("Empty expression")
        node = self.parse_expr()
        if self.pos != len(self.tokens):
            raise ExpressionError(f"Trailing input {self.peek()[1]!r} in {self.text!r}")
        return node

    def parse_expr(self) -> Node:
        node = self.parse_term()
        while self.peek()[1] in ("+", "-"):
            op = self.advance()[1]
            node = BinaryOp(op, node, self.parse_term())
        return node

    def parse_term(self) -> Node:
        node = self.parse_unary()
        while self.peek()[1] in ("*", "/"):
            op = self.advance()[1]
            node = BinaryOp(op, node, self.parse_unary())
        return node

    def parse_unary(self) -> Node:
        if self.peek()[1] in ("-", "+"):
            op = self.advance()[1]
            return UnaryOp(op, self.parse_unary())
        return self.parse_power()

    def parse_power(self) -> Node:
        base = self.parse_atom()
        if self.peek()[1] == "^":
            self.advance()
            # right associative: 2^3^2 = 2^(3^2)
            return BinaryOp("^", base, self.parse_unary())
        return base

    def parse_atom(self) -> Node:
        kind, value = self.advance()
        if kind == "number":
            return Number(float(value))
        if kind == "name":
            if value in FUNCTIONS:
                self.expect("(")
                argument = self.parse_expr()
                self.expect(")")
                return Call(value, argument)
            if value in self.variables:
                return Variable(value)
            if value in CONSTANTS:
                return Number(CONSTANTS[value])
            raise ExpressionError(f"Unknown name {value!r} in {self.text!r} (allowed: {', '.join(self.variables)})")
        if value == "(":
            node = self.parse_expr()
            self.expect(")")
            return node
        raise ExpressionError(f"Unexpected token {value!r} in {self.text!r}")


class Expression:
    """A parsed expression, callable with keyword arrays for its variables."""

    def __init__(self, text: str, variables: Sequence[str] = SPATIAL_VARIABLES):
        self.text = str(text)
        self.variables = tuple(variables)
        self.root = Parser(self.text, self.variables).parse()

    def __call__(self, **values) -> np.ndarray:
        missing = [name for name in self.variables if name not in values]
        if missing:
            raise ExpressionError(f"Missing values for {missing} in {self.text!r}")
        arrays = np.broadcast_arrays(*[np.asarray(values[name], dtype=float) for name in self.variables])
        env = dict(zip(self.variables, arrays))
        with np.errstate(all="ignore"):
            result = self.root.evaluate(env)
        return np.broadcast_to(np.asarray(result, dtype=float), arrays[0].shape).copy()

    def at_points(self, points: np.ndarray) -> np.ndarray:
        """Evaluate a spatial expression at an (n, 3) array of points."""
        points = np.asarray(points, dtype=float)
        return self(x1=points[..., 0], x2=points[..., 1], x3=points[..., 2])

    def __repr__(self):
        return f"Expression({self.text!r})"


def parse_vector(texts: Sequence[str], variables: Sequence[str] = SPATIAL_VARIABLES) -> List[Expression]:
    """Parse a 3-component vector field given as three expression strings."""
    if len(texts) != 3:
        raise ExpressionError(f"A vector field needs 3 components, got {len(texts)}")
    return [Expression(text, variables) for text in texts]
