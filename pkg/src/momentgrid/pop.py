"""A small text format for polynomial optimization problems in complex variables.

Grammar, one statement per line (``#`` starts a comment)::

    vars z1 z2                      declare the variables, in order
    param a = 7/18                  named constant (any constant expression)
    minimize <expr>
    [label:] <expr> >= <expr>       also <= and ==

Expressions use ``+ - * /``, ``^`` or ``**`` with integer exponents,
parentheses, numbers, the imaginary unit ``i`` (or ``j``), variables,
``conj(z)`` and ``|z|`` for the modulus (only raised to even powers, so
``|z|^2`` is z conj(z)).  Constraints are moved to the form g >= 0 or g == 0.
"""

from __future__ import annotations

import ast
import re

from .cpoly import EQ, GE, Constraint, CPolynomial, CPolyProblem
from .errors import PopSyntaxError

_REL = re.compile(r"(>=|<=|==)")
_LABEL = re.compile(r"^([A-Za-z_][\w.\-]*)\s*:\s*(.*)$")
_MOD = re.compile(r"\|\s*([A-Za-z_]\w*)\s*\|")


class _Modulus:
    """|z|, usable only as |z|^(2k)."""

    def __init__(self, sq: CPolynomial):
        self.sq = sq


def _evaluate(text: str, env: dict, n: int, lineno: int):
    src = _MOD.sub(r"_mod(\1)", text.strip()).replace("^", "**")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as e:
        raise PopSyntaxError(f"line {lineno}: cannot parse {text.strip()!r}") from e

    def fail(msg):
        raise PopSyntaxError(f"line {lineno}: {msg}")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            fail(f"unknown name {node.id!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            if isinstance(v, _Modulus):
                fail("modulus must be raised to an even power")
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            left, right = ev(node.left), ev(node.right)
            if isinstance(node.op, ast.Pow):
                if not isinstance(right, int) or isinstance(right, bool) or right < 0:
                    fail("exponents must be nonnegative integer literals")
                if isinstance(left, _Modulus):
                    if right % 2:
                        fail("modulus must be raised to an even power")
                    return left.sq ** (right // 2)
                return left ** right
            if isinstance(left, _Modulus) or isinstance(right, _Modulus):
                fail("modulus must be raised to an even power")
            if isinstance(node.op, ast.Add):
                return left + right if not _is_scalar(left) else right + left
            if isinstance(node.op, ast.Sub):
                return left - right if not _is_scalar(left) else -right + left
            if isinstance(node.op, ast.Mult):
                return left * right if not _is_scalar(left) else right * left
            if isinstance(node.op, ast.Div):
                if not _is_scalar(right):
                    fail("division by a polynomial")
                if right == 0:
                    fail("division by zero")
                return left * (1.0 / right)
            fail(f"unsupported operator {type(node.op).__name__}")
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            if len(node.args) != 1:
                fail(f"{node.func.id}() takes one argument")
            arg = node.args[0]
            if not (isinstance(arg, ast.Name) and arg.id in env.get("_vars", {})):
                fail(f"{node.func.id}() applies to a variable")
            k = env["_vars"][arg.id]
            if node.func.id == "conj":
                return CPolynomial.conj_var(k, n)
            if node.func.id == "_mod":
                return _Modulus(CPolynomial.modulus_sq(k, n))
            fail(f"unknown function {node.func.id!r}")
        fail(f"unsupported syntax in {text.strip()!r}")

    return ev(tree)


def _is_scalar(v) -> bool:
    return isinstance(v, (int, float, complex))


def _as_poly(v, n) -> CPolynomial:
    if isinstance(v, _Modulus):
        raise PopSyntaxError("modulus must be raised to an even power")
    return CPolynomial.constant(v, n) if _is_scalar(v) else v


def parse_pop(text: str) -> CPolyProblem:
    """Parse ``.pop`` text into a problem; raises PopSyntaxError."""
    names: list[str] = []
    params: dict = {"i": 1j, "j": 1j}
    objective = None
    cons: list[Constraint] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "vars":
            if names:
                raise PopSyntaxError(f"line {lineno}: variables declared twice")
            names = rest.split()
            if not names or len(set(names)) != len(names):
                raise PopSyntaxError(f"line {lineno}: need distinct variable names")
            for nm in names:
                if not nm.isidentifier() or nm in ("i", "j", "conj"):
                    raise PopSyntaxError(f"line {lineno}: bad variable name {nm!r}")
            continue
        if not names:
            raise PopSyntaxError(f"line {lineno}: 'vars' must come first")
        n = len(names)
        env = dict(params)
        env.update({nm: CPolynomial.var(k, n) for k, nm in enumerate(names)})
        env["_vars"] = {nm: k for k, nm in enumerate(names)}
        if head == "param":
            name, eq, expr = rest.partition("=")
            name = name.strip()
            if not eq or not name.isidentifier() or name in env:
                raise PopSyntaxError(f"line {lineno}: expected 'param <name> = <value>'")
            val = _evaluate(expr, params, n, lineno)
            if not _is_scalar(val):
                raise PopSyntaxError(f"line {lineno}: parameter must be a constant")
            params[name] = val
            continue
        if head == "minimize":
            if objective is not None:
                raise PopSyntaxError(f"line {lineno}: second objective")
            objective = _as_poly(_evaluate(rest, env, n, lineno), n)
            continue
        label = f"g{len(cons) + 1}"
        m = _LABEL.match(line)
        if m and not _REL.search(m.group(1)):
            label, line = m.group(1), m.group(2)
        parts = _REL.split(line)
        if len(parts) != 3:
            raise PopSyntaxError(f"line {lineno}: expected one of >=, <=, == in {raw.strip()!r}")
        lhs = _as_poly(_evaluate(parts[0], env, n, lineno), n)
        rhs = _as_poly(_evaluate(parts[2], env, n, lineno), n)
        rel = parts[1]
        poly = lhs - rhs if rel != "<=" else rhs - lhs
        if not poly.is_hermitian(1e-12):
            raise PopSyntaxError(f"line {lineno}: constraint {label!r} is not real-valued")
        cons.append(Constraint(poly, EQ if rel == "==" else GE, label))
    if not names:
        raise PopSyntaxError("no 'vars' statement")
    if objective is None:
        raise PopSyntaxError("no 'minimize' statement")
    if not objective.is_hermitian(1e-12):
        raise PopSyntaxError("objective is not real-valued")
    return CPolyProblem(objective, cons, len(names), names)


def read_pop(path) -> CPolyProblem:
    with open(path, encoding="utf-8") as fh:
        return parse_pop(fh.read())
