"""A tiny arithmetic-expression language with forward-mode differentiation.

Grammar (usual precedence, ``^`` right-associative and binding tighter than
unary minus)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'

Variables are ``q1 .. qd``; functions are ``exp`` and ``cos``. Gradients use
dual numbers, Hessians use duals whose components are themselves duals.
Components may be numpy arrays, so evaluation vectorizes over points.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

Number = Union[float, np.ndarray, "Dual"]


class Dual:
    """Truncated first-order Taylor pair ``val + eps * der`` with ``eps**2 = 0``."""

    __slots__ = ("val", "der")

    def __init__(self, val, der):
        self.val = val
        self.der = der

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        return Dual(self.val + other, self.der)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.der * other.val + self.val * other.der)
        return Dual(self.val * other, self.der * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = reciprocal(other)
            return self * inv
        return Dual(self.val / other, self.der / other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other


def reciprocal(x: Number) -> Number:
    if isinstance(x, Dual):
        r = reciprocal(x.val)
        return Dual(r, -x.der * r * r)
    return 1.0 / x


def exp(x: Number) -> Number:
    if isinstance(x, Dual):
        e = exp(x.val)
        return Dual(e, x.der * e)
    return np.exp(x)


def cos(x: Number) -> Number:
    if isinstance(x, Dual):
        return Dual(cos(x.val), -x.der * sin(x.val))
    return np.cos(x)


def sin(x: Number) -> Number:
    if isinstance(x, Dual):
        return Dual(sin(x.val), x.der * cos(x.val))
    return np.sin(x)


def log(x: Number) -> Number:
    if isinstance(x, Dual):
        return Dual(log(x.val), x.der * reciprocal(x.val))
    return np.log(x)


def power(base: Number, expo: Number) -> Number:
    if isinstance(expo, Dual):
        return exp(expo * log(base))
    if isinstance(base, Dual):
        k = float(expo)
        if k == 0.0:
            return Dual(power(base.val, 0.0), base.der * 0.0)
        return Dual(power(base.val, k), base.der * k * power(base.val, k - 1.0))
    k = float(expo)
    if k.is_integer():
        return np.power(base, int(k)) if abs(k) < 64 else np.power(base, k)
    return np.power(base, k)


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_FUNCS: dict[str, Callable[[Number], Number]] = {"exp": exp, "cos": cos}


@dataclass(frozen=True)
class Node:
    kind: str  # "num", "var", "neg", "bin", "call"
    value: object = None
    args: tuple = ()


class ExpressionSyntaxError(ValueError):
    pass


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return out


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ExpressionSyntaxError(f"expected {value or 'token'}, got {tok[1]!r}")
        self.i += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = Node("bin", op, (node, self.term()))
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = Node("bin", op, (node, self.unary()))
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return Node("neg", None, (self.unary(),))
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^":
            self.take()
            return Node("bin", "^", (base, self.unary()))
        return base

    def primary(self):
        kind, text = self.peek()
        if kind == "num":
            self.take()
            return Node("num", float(text))
        if kind == "name":
            self.take()
            if text in _FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return Node("call", text, (arg,))
            m = re.fullmatch(r"q([1-9][0-9]*)", text)
            if m is None:
                raise ExpressionSyntaxError(f"unknown name {text!r}")
            return Node("var", int(m.group(1)) - 1)
        if text == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        raise ExpressionSyntaxError(f"unexpected token {text!r}")


def parse(text: str) -> Node:
    parser = _Parser(_tokenize(text))
    node = parser.expr()
    if parser.i != len(parser.toks):
        raise ExpressionSyntaxError(f"trailing input: {parser.peek()[1]!r}")
    return node


def max_variable(node: Node) -> int:
    """Number of variables referenced (highest index + 1)."""
    if node.kind == "var":
        return node.value + 1
    return max((max_variable(a) for a in node.args), default=0)


def evaluate(node: Node, variables: list) -> Number:
    kind = node.kind
    if kind == "num":
        return node.value
    if kind == "var":
        return variables[node.value]
    if kind == "neg":
        return -evaluate(node.args[0], variables)
    if kind == "call":
        return _FUNCS[node.value](evaluate(node.args[0], variables))
    a = evaluate(node.args[0], variables)
    b = evaluate(node.args[1], variables)
    if node.value == "+":
        return a + b
    if node.value == "-":
        return a - b
    if node.value == "*":
        return a * b
    if node.value == "/":
        return a / b
    return power(a, b)


class CompiledExpression:
    """Scalar field on ℝ^d given by an expression, vectorized over leading axes."""

    def __init__(self, text: str, dim: int | None = None):
        self.text = text
        self.tree = parse(text)
        needed = max_variable(self.tree)
        self.dim = needed if dim is None else int(dim)
        if self.dim < max(needed, 1):
            raise ExpressionSyntaxError(f"expression uses q{needed} but dim={self.dim}")

    def _columns(self, q):
        q = np.asarray(q, dtype=float)
        return q, [q[..., i] for i in range(self.dim)]

    def value(self, q):
        q, cols = self._columns(q)
        out = evaluate(self.tree, cols)
        return np.broadcast_to(np.asarray(out, dtype=float), q.shape[:-1]).copy()

    def gradient(self, q):
        q, cols = self._columns(q)
        zero = np.zeros(q.shape[:-1])
        out = np.empty(q.shape)
        for i in range(self.dim):
            duals = [Dual(c, zero + (1.0 if j == i else 0.0)) for j, c in enumerate(cols)]
            res = evaluate(self.tree, duals)
            out[..., i] = res.der if isinstance(res, Dual) else 0.0
        return out

    def hessian(self, q):
        q, cols = self._columns(q)
        zero = np.zeros(q.shape[:-1])
        d = self.dim
        out = np.empty(q.shape + (d,))
        for i in range(d):
            for j in range(i, d):
                duals = [
                    Dual(Dual(c, zero + (1.0 if k == j else 0.0)), Dual(zero + (1.0 if k == i else 0.0), zero))
                    for k, c in enumerate(cols)
                ]
                res = evaluate(self.tree, duals)
                h = res.der.der if isinstance(res, Dual) and isinstance(res.der, Dual) else 0.0
                out[..., i, j] = h
                out[..., j, i] = h
        return out
