"""Tiny arithmetic expression language shared by scenario fields.

Expressions are parsed once into a vectorized numpy callable. Allowed:
numbers, the variables given at compile time, ``+ - * / **``, unary minus,
and the functions ``sin cos exp min max abs sqrt cosh sinh`` plus ``pi``.
"""

from __future__ import annotations

import ast

import numpy as np

__all__ = ["ExpressionError", "compile_expression"]

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "min": np.minimum,
    "max": np.maximum,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "cosh": np.cosh,
    "sinh": np.sinh,
}
_CONSTS = {"pi": np.pi}
_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


class ExpressionError(ValueError):
    pass


def compile_expression(text, variables=("t",)):
    """Return ``f(*variables)`` evaluating ``text`` elementwise.

    >>> f = compile_expression("max(sin(t), 0.5)")
    >>> float(f(0.0))
    0.5
    """
    if isinstance(text, (int, float)):
        value = float(text)

        def const(*args):
            return np.full(np.broadcast(*args).shape, value) if args else value

        const.source = repr(value)
        const.names = frozenset()
        return const
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    names = set(variables)
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ExpressionError(f"{type(node).__name__} not allowed in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ExpressionError(f"non-numeric constant in {text!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ExpressionError(f"unsupported call in {text!r}")
        elif isinstance(node, ast.Name) and node.id not in names | _FUNCS.keys() | _CONSTS.keys():
            raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
    code = compile(tree, "<expression>", "eval")
    env = {"__builtins__": {}, **_FUNCS, **_CONSTS}
    variables = tuple(variables)

    def f(*args):
        local = dict(zip(variables, (np.asarray(a, dtype=float) for a in args)))
        out = eval(code, env, local)  # noqa: S307 -- AST checked above
        shape = np.broadcast(*local.values()).shape if local else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)

    f.source = str(text)
    f.names = frozenset(n.id for n in ast.walk(tree) if isinstance(n, ast.Name))
    return f
