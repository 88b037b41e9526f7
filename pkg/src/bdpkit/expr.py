"""A small, safe expression language for custom rates and constraints.

Rate expressions use ``z``, parameters written ``p[i]`` or ``pi``, numeric
literals, ``+ - * / **``, and the functions ``exp``, ``log``, ``pow``,
``sqrt``, ``min`` and ``max``. Constraints compare two such expressions
(without ``z``), e.g. ``"p0 > p1"`` or ``"p[2] <= 0.1"``.
"""

from __future__ import annotations

import ast
import operator
import re

import numpy as np

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {
    "exp": (np.exp, 1),
    "log": (np.log, 1),
    "sqrt": (np.sqrt, 1),
    "pow": (np.power, 2),
    "min": (np.minimum, 2),
    "max": (np.maximum, 2),
}
_PNAME = re.compile(r"^p(\d+)$")


class ExpressionError(ValueError):
    pass


def _compile(node, allow_z, max_index):
    """Turn an AST node into a closure ``f(z, p)`` and record parameter use."""
    if isinstance(node, ast.Expression):
        return _compile(node.body, allow_z, max_index)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        v = float(node.value)
        return lambda z, p: v
    if isinstance(node, ast.Name):
        if node.id == "z":
            if not allow_z:
                raise ExpressionError("'z' is not allowed here")
            return lambda z, p: z
        m = _PNAME.match(node.id)
        if m:
            i = int(m.group(1))
            max_index.append(i)
            return lambda z, p: p[i]
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.Subscript):
        if not (isinstance(node.value, ast.Name) and node.value.id == "p"):
            raise ExpressionError("only p[...] may be indexed")
        idx = node.slice
        if not (isinstance(idx, ast.Constant) and isinstance(idx.value, int)
                and not isinstance(idx.value, bool) and idx.value >= 0):
            raise ExpressionError("parameter indices must be non-negative integer literals")
        i = idx.value
        max_index.append(i)
        return lambda z, p: p[i]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        a = _compile(node.left, allow_z, max_index)
        b = _compile(node.right, allow_z, max_index)
        return lambda z, p: op(a(z, p), b(z, p))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        op = _UNARY[type(node.op)]
        a = _compile(node.operand, allow_z, max_index)
        return lambda z, p: op(a(z, p))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
            and node.func.id in _FUNCS and not node.keywords:
        fn, arity = _FUNCS[node.func.id]
        if len(node.args) != arity:
            raise ExpressionError(f"{node.func.id} takes {arity} argument(s)")
        args = [_compile(a, allow_z, max_index) for a in node.args]
        return lambda z, p: fn(*(g(z, p) for g in args))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def _parse(text, mode="eval"):
    try:
        return ast.parse(text.strip(), mode=mode)
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None


def rate_function(text: str):
    """Compile a rate expression. Returns ``(f, n_params)`` where ``f(z, p)``
    evaluates elementwise and ``n_params`` is one more than the largest
    parameter index used (0 when none)."""
    used: list = []
    f = _compile(_parse(text), True, used)
    return f, (max(used) + 1 if used else 0)


_CMP = {ast.Gt: "gt", ast.GtE: "gt", ast.Lt: "lt", ast.LtE: "lt", ast.Eq: "eq"}


def constraint(text: str) -> dict:
    """Compile ``"lhs OP rhs"`` into ``{"type", "fun"}`` with ``fun(p) >= 0``
    (or ``== 0`` for ``==``)."""
    tree = _parse(text).body
    if not (isinstance(tree, ast.Compare) and len(tree.ops) == 1
            and type(tree.ops[0]) in _CMP):
        raise ExpressionError(f"constraint {text!r} must have the form 'lhs OP rhs' "
                              "with OP one of > >= < <= ==")
    used: list = []
    lhs = _compile(tree.left, False, used)
    rhs = _compile(tree.comparators[0], False, used)
    kind = _CMP[type(tree.ops[0])]
    if kind == "gt":
        return {"type": "ineq", "fun": lambda p: float(lhs(None, p) - rhs(None, p))}
    if kind == "lt":
        return {"type": "ineq", "fun": lambda p: float(rhs(None, p) - lhs(None, p))}
    return {"type": "eq", "fun": lambda p: float(lhs(None, p) - rhs(None, p))}
