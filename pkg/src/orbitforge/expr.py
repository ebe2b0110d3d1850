"""Potential expressions: parsing and forward-mode differentiation.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          # right-associative, binds tighter than unary minus
    atom   := NUMBER | 'pi' | x<k> | PARAM | FUNC '(' expr ')' | '(' expr ')'

Variables are ``x1 .. xn``; any other identifier that is not a function name is a
late-bound parameter.  Functions: sin cos tan tanh exp log sqrt abs.

Evaluation works on floats or numpy arrays of points (last axis = coordinate), so a
single tree walk evaluates a whole path or grid.  Derivatives come from dual numbers
whose parts may themselves be duals (second derivatives).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

__all__ = [
    "Expr",
    "ExprError",
    "ExprSyntaxError",
    "DomainError",
    "UnboundParameterError",
    "Dual",
    "parse",
    "evaluate",
    "gradient",
    "hessian",
    "FUNCTIONS",
]


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class DomainError(ExprError, ArithmeticError):
    """Function evaluated outside its real domain."""


class UnboundParameterError(ExprError, KeyError):
    def __str__(self):
        return self.args[0] if self.args else "unbound parameter"


# --------------------------------------------------------------------------- #
# syntax tree


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Param, Neg, BinOp, Call]

def to_source(node: Node) -> str:
    """Canonical printer; ``parse(to_source(t))`` reproduces ``t``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, Neg):
        return f"(-{_wrap(node.operand)})"
    return f"({_wrap(node.left)} {node.op} {_wrap(node.right)})"


def _wrap(node: Node) -> str:
    s = to_source(node)
    if isinstance(node, (Num, Var, Param, Call)) or s.startswith("("):
        return s
    return f"({s})"


# --------------------------------------------------------------------------- #
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_VAR_RE = re.compile(r"x([1-9]\d*)$")


@dataclass
class _Token:
    kind: str  # 'num', 'ident', 'op', 'end'
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(source)
    while True:
        while pos < n and source[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), start))
        pos = m.end()
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str, params: Optional[set]):
        self.tokens = _tokenize(source)
        self.i = 0
        self.params = params
        self.max_index = 0
        self.param_names: set[str] = set()

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> None:
        t = self.tok
        if t.kind != "op" or t.text != text:
            found = "end of input" if t.kind == "end" else repr(t.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", t.pos)
        self.i += 1

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.take().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.take().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.take()
            return Neg(self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.take()
            return Num(float(t.text))
        if t.kind == "ident":
            self.take()
            name = t.text
            if name in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                if self.tok.kind == "op" and self.tok.text == ",":
                    raise ExprSyntaxError(f"{name}() takes exactly one argument", self.tok.pos)
                self.expect(")")
                return Call(name, arg)
            if self.tok.kind == "op" and self.tok.text == "(":
                raise ExprSyntaxError(f"unknown function {name!r}", t.pos)
            if name == "pi":
                return Num(math.pi)
            m = _VAR_RE.match(name)
            if m:
                index = int(m.group(1))
                self.max_index = max(self.max_index, index)
                return Var(index)
            if re.match(r"x\d+$", name) or (self.params is not None and name not in self.params):
                raise ExprSyntaxError(f"unknown identifier {name!r}", t.pos)
            self.param_names.add(name)
            return Param(name)
        if t.kind == "op" and t.text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if t.kind == "end" else repr(t.text)
        raise ExprSyntaxError(f"unexpected {found}", t.pos)


# --------------------------------------------------------------------------- #
# dual numbers


class Dual:
    """``re + du*eps`` with eps**2 = 0.  Parts may be floats, arrays or Duals."""

    __slots__ = ("re", "du")

    def __init__(self, re, du):
        self.re = re
        self.du = du

    def __repr__(self):
        return f"Dual({self.re!r}, {self.du!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re + other.re, self.du + other.du)
        return Dual(self.re + other, self.du)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re - other.re, self.du - other.du)
        return Dual(self.re - other, self.du)

    def __rsub__(self, other):
        return Dual(other - self.re, -self.du)

    def __neg__(self):
        return Dual(-self.re, -self.du)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re * other.re, self.re * other.du + self.du * other.re)
        return Dual(self.re * other, self.du * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.re
            q = self.re * inv
            return Dual(q, (self.du - q * other.du) * inv)
        return Dual(self.re / other, self.du / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.re
        q = other * inv
        return Dual(q, -q * inv * self.du)


def _real(x):
    while isinstance(x, Dual):
        x = x.re
    return x


def _sin(x):
    if isinstance(x, Dual):
        return Dual(_sin(x.re), _cos(x.re) * x.du)
    return np.sin(x)


def _cos(x):
    if isinstance(x, Dual):
        return Dual(_cos(x.re), -_sin(x.re) * x.du)
    return np.cos(x)


def _tan(x):
    if isinstance(x, Dual):
        t = _tan(x.re)
        return Dual(t, (1.0 + t * t) * x.du)
    return np.tan(x)


def _tanh(x):
    if isinstance(x, Dual):
        t = _tanh(x.re)
        return Dual(t, (1.0 - t * t) * x.du)
    return np.tanh(x)


def _exp(x):
    if isinstance(x, Dual):
        e = _exp(x.re)
        return Dual(e, e * x.du)
    return np.exp(x)


def _log(x):
    if isinstance(x, Dual):
        return Dual(_log(x.re), x.du / x.re)
    if np.any(np.asarray(x) <= 0):
        raise DomainError("log of a non-positive number")
    return np.log(x)


def _sqrt(x):
    if isinstance(x, Dual):
        s = _sqrt(x.re)
        return Dual(s, x.du / (2.0 * s))
    if np.any(np.asarray(x) < 0):
        raise DomainError("sqrt of a negative number")
    return np.sqrt(x)


def _sign(x):
    return np.sign(_real(x))


def _abs(x):
    if isinstance(x, Dual):
        return Dual(_abs(x.re), _sign(x.re) * x.du)
    return np.abs(x)


def _powi(x, k: int):
    """x**k for integer k, exact derivative k*x**(k-1)."""
    if isinstance(x, Dual):
        if k == 0:
            return 1.0
        return Dual(_powi(x.re, k), k * _powi(x.re, k - 1) * x.du)
    if k < 0:
        return 1.0 / np.power(x, -k)
    return np.power(x, k) if k else np.ones_like(x, dtype=float)


def _powc(x, c: float):
    """x**c for a non-integer constant c; base must be non-negative."""
    if np.any(np.asarray(_real(x)) < 0):
        raise DomainError("non-integer power of a negative number")
    if isinstance(x, Dual):
        return Dual(_powc(x.re, c), c * _powc(x.re, c - 1.0) * x.du)
    return np.power(x, c)


def _pow(a, b):
    if not isinstance(b, Dual) and np.ndim(b) == 0:
        b = float(b)
        if b.is_integer() and abs(b) < 2**31:
            return _powi(a, int(b))
        return _powc(a, b)
    if np.any(np.asarray(_real(a)) <= 0):
        raise DomainError("variable power of a non-positive number")
    return _exp(b * _log(a))


FUNCTIONS = {
    "sin": _sin,
    "cos": _cos,
    "tan": _tan,
    "tanh": _tanh,
    "exp": _exp,
    "log": _log,
    "sqrt": _sqrt,
    "abs": _abs,
}

# public names so potentials written in Python can share the same rules
sin, cos, tan, tanh, exp, log, sqrt = _sin, _cos, _tan, _tanh, _exp, _log, _sqrt
absolute, power = _abs, _pow


def _walk(node: Node, xs, params):
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Var):
        return xs[node.index - 1]
    if isinstance(node, Param):
        try:
            return params[node.name]
        except KeyError:
            raise UnboundParameterError(f"parameter {node.name!r} is not bound") from None
    if isinstance(node, Neg):
        return -_walk(node.operand, xs, params)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_walk(node.arg, xs, params))
    a = _walk(node.left, xs, params)
    b = _walk(node.right, xs, params)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    return _pow(a, b)


# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Expr:
    """Immutable parsed expression.  Evaluation is reentrant."""

    root: Node
    dimension: int
    params: frozenset
    source: str = field(default="", compare=False)

    def __str__(self):
        return to_source(self.root)

    def _coords(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dimension:
            raise ValueError(
                f"point has {x.shape[-1] if x.ndim else 0} coordinates, expression needs {self.dimension}"
            )
        return x, [x[..., i] for i in range(self.dimension)]

    def _bind(self, params):
        params = dict(params or {})
        missing = self.params.difference(params)
        if missing:
            raise UnboundParameterError(f"parameter {sorted(missing)[0]!r} is not bound")
        return params

    def _run(self, xs, params):
        with np.errstate(all="ignore"):
            return _walk(self.root, xs, params)

    def eval(self, x, params: Optional[Mapping[str, float]] = None):
        x, xs = self._coords(x)
        out = np.asarray(self._run(xs, self._bind(params)), dtype=float)
        if x.ndim > 1:
            return np.broadcast_to(out, x.shape[:-1]).copy()
        return float(out)

    def grad(self, x, params: Optional[Mapping[str, float]] = None) -> np.ndarray:
        x, xs = self._coords(x)
        params = self._bind(params)
        out = np.zeros(x.shape, dtype=float)
        one, zero = np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])
        for i in range(self.dimension):
            seeded = [Dual(xk, one if k == i else zero) for k, xk in enumerate(xs)]
            r = self._run(seeded, params)
            out[..., i] = r.du if isinstance(r, Dual) else 0.0
        return out

    def hessian(self, x, params: Optional[Mapping[str, float]] = None) -> np.ndarray:
        x, xs = self._coords(x)
        params = self._bind(params)
        n = self.dimension
        out = np.zeros(x.shape + (n,), dtype=float)
        one, zero = np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])
        for i in range(n):
            for j in range(i, n):
                seeded = [
                    Dual(Dual(xk, one if k == i else zero), Dual(one if k == j else zero, zero))
                    for k, xk in enumerate(xs)
                ]
                r = self._run(seeded, params)
                h = r.du.du if isinstance(r, Dual) and isinstance(r.du, Dual) else 0.0
                out[..., i, j] = h
                out[..., j, i] = h
        return out


def parse(source: str, params: Optional[set] = None) -> Expr:
    """Parse ``source``.  If ``params`` is given, other identifiers are rejected."""
    p = _Parser(source, set(params) if params is not None else None)
    root = p.parse()
    return Expr(root, p.max_index, frozenset(p.param_names), source)


def evaluate(e: Expr, x, params=None):
    return e.eval(x, params)


def gradient(e: Expr, x, params=None) -> np.ndarray:
    return e.grad(x, params)


def hessian(e: Expr, x, params=None) -> np.ndarray:
    return e.hessian(x, params)
