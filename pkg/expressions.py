"""Restricted expression grammar for problem files.

Accepted: numbers, + - * / ^ (or **), parentheses, unary minus, the
identifiers a caller allows (t, s, u, x1, x2, x3) and exp/sin/cos/ln/sqrt.
The text is checked node by node against that whitelist and converted to a
sympy expression directly from the syntax tree, never evaluated as Python.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy

from errors import ValidationError

FUNCTIONS = {
    "exp": sympy.exp,
    "sin": sympy.sin,
    "cos": sympy.cos,
    "ln": sympy.log,
    "log": sympy.log,
    "sqrt": sympy.sqrt,
}

_BINARY = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


def _to_sympy(node, symbols: dict, text: str):
    if isinstance(node, ast.Expression):
        return _to_sympy(node.body, symbols, text)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return sympy.Float(node.value) if isinstance(node.value, float) else sympy.Integer(node.value)
    if isinstance(node, ast.Name):
        if node.id in symbols:
            return symbols[node.id]
        raise ValidationError(f"unknown identifier {node.id!r} in {text!r}", ["expression-identifiers"])
    if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
        return _BINARY[type(node.op)](_to_sympy(node.left, symbols, text), _to_sympy(node.right, symbols, text))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        operand = _to_sympy(node.operand, symbols, text)
        return -operand if isinstance(node.op, ast.USub) else operand
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in FUNCTIONS
        and len(node.args) == 1
        and not node.keywords
    ):
        return FUNCTIONS[node.func.id](_to_sympy(node.args[0], symbols, text))
    raise ValidationError(f"unsupported syntax {type(node).__name__} in {text!r}", ["expression-grammar"])


@dataclass(frozen=True)
class Expression:
    text: str
    variables: tuple
    expr: sympy.Expr
    fn: Callable

    def __call__(self, *args):
        arrays = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        result = np.asarray(self.fn(*arrays), dtype=float)
        return np.broadcast_to(result, arrays[0].shape).copy() if result.shape != arrays[0].shape else result

    @property
    def is_zero(self) -> bool:
        return self.expr == 0


def parse_expression(text, variables) -> Expression:
    """Compile ``text`` into a numpy callable taking ``variables`` positionally."""
    variables = tuple(variables)
    source = str(text).replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"cannot parse expression {text!r}: {exc.msg}", ["expression-grammar"]) from exc
    symbols = {name: sympy.Symbol(name, real=True) for name in variables}
    expr = _to_sympy(tree, symbols, str(text))
    fn = sympy.lambdify([symbols[name] for name in variables], expr, modules="numpy")
    return Expression(str(text), variables, expr, fn)
