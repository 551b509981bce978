"""A tiny expression language for coefficient functions of ``(t, x)``.

Grammar (whitespace insignificant)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' int)?
    factor := '-' factor                         (unary minus, an extension)
    base   := number | 't' | 'x' | func '(' expr ')' | '(' expr ')'
    func   := sin | cos | exp | jap | chi1 | chi2

``int`` may be signed and may be parenthesised, so ``jap(t)^(-3)`` parses.
Derivatives of the cutoffs print as ``chi1_d<k>(...)`` / ``chi2_d<k>(...)``;
the parser accepts those names so that printed derivatives round-trip.

Expressions are immutable (frozen dataclasses); :func:`diff` is exact.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import cutoffs

__all__ = [
    "Expr", "Const", "Var", "Add", "Sub", "Mul", "Div", "Pow", "Call",
    "ParseError", "EvalError", "parse", "evaluate", "diff", "compile_expr",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "exp", "jap", "chi1", "chi2")
VARIABLES = ("t", "x")


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EvalError(ArithmeticError):
    pass


class Expr:
    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr
    order: int = 0  # derivative order, only used for chi1/chi2


ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_CHI_DERIV = re.compile(r"(chi[12])_d(\d+)$")


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos == len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, off = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.factor()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def factor(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            inner = self.factor()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Sub(ZERO, inner)
        e = self.base()
        if self.peek()[1] == "^":
            self.take()
            e = Pow(e, self.integer())
        return e

    def integer(self) -> int:
        kind, val, off = self.peek()
        if val == "(":
            self.take()
            n = self.integer()
            self.expect(")")
            return n
        sign = 1
        if val in ("-", "+"):
            self.take()
            sign = -1 if val == "-" else 1
            kind, val, off = self.peek()
        if kind != "num":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected integer exponent, found {found}", off)
        self.take()
        if not re.fullmatch(r"\d+", val):
            raise ParseError(f"non-integer exponent {val!r}", off)
        return sign * int(val)

    def base(self) -> Expr:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in VARIABLES:
                return Var(val)
            m = _CHI_DERIV.match(val)
            if val in FUNCTIONS or m:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                if m:
                    return Call(m.group(1), arg, int(m.group(2)))
                return Call(val, arg)
            raise ParseError(f"unknown identifier {val!r}", off)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", off)


def parse(text: str) -> Expr:
    """Parse ``text`` into an :class:`Expr`; raises :class:`ParseError`."""
    return _Parser(text).parse()


# --------------------------------------------------------------- printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Pow: 3}


def _fmt_num(v: float) -> str:
    v = float(v) + 0.0     # -0.0 prints as 0.0
    s = repr(v)
    if s in ("inf", "-inf", "nan"):
        raise EvalError(f"non-finite constant {s}")
    return f"({s})" if v < 0 else s


def to_text(e: Expr) -> str:
    if isinstance(e, Const):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        name = e.func if e.order == 0 else f"{e.func}_d{e.order}"
        return f"{name}({to_text(e.arg)})"
    if isinstance(e, Pow):
        b = to_text(e.base)
        if not isinstance(e.base, (Const, Var, Call)):
            b = f"({b})"
        return f"{b}^({e.exponent})"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    p = _PREC[type(e)]
    left = to_text(e.left)
    right = to_text(e.right)
    if type(e.left) in _PREC and _PREC[type(e.left)] < p:
        left = f"({left})"
    # parenthesise an equal-precedence right operand so the tree shape round-trips
    if type(e.right) in _PREC and _PREC[type(e.right)] <= p:
        right = f"({right})"
    return f"{left} {op} {right}"


# ------------------------------------------------------------- evaluation

def _jap(u):
    return np.sqrt(1.0 + u * u)


_NAMESPACE = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "jap": _jap,
    "dchi1": cutoffs.dchi1, "dchi2": cutoffs.dchi2,
}


def _source(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        if e.func in ("chi1", "chi2"):
            return f"d{e.func}({_source(e.arg)}, {e.order})"
        return f"{e.func}({_source(e.arg)})"
    if isinstance(e, Pow):
        return f"(({_source(e.base)}) ** {e.exponent})"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    return f"({_source(e.left)} {op} {_source(e.right)})"


@lru_cache(maxsize=4096)
def compile_expr(e: Expr):
    """Compile ``e`` to a numpy-vectorised callable ``f(t, x)``."""
    return eval(f"lambda t, x: {_source(e)}", dict(_NAMESPACE))  # noqa: S307


def evaluate(e: Expr, t, x):
    """Evaluate ``e`` at ``(t, x)`` (scalars or broadcastable arrays).

    Division by zero, a zero base under a negative power and any non-finite
    result raise :class:`EvalError`.
    """
    f = compile_expr(e)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    try:
        with np.errstate(divide="raise", over="raise", invalid="raise"):
            val = f(t, x)
    except (FloatingPointError, ZeroDivisionError, OverflowError) as exc:
        raise EvalError(f"evaluation of {to_text(e)!r} failed: {exc}") from None
    val = np.broadcast_to(np.asarray(val, dtype=float), np.broadcast(t, x).shape)
    if not np.all(np.isfinite(val)):
        raise EvalError(f"non-finite value of {to_text(e)!r}")
    if val.ndim == 0:
        return float(val)
    return np.array(val)


# --------------------------------------------------------- differentiation

def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Div(a, b)


def power(b: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return b
    if isinstance(b, Const) and (b.value != 0.0 or n > 0):
        return Const(b.value ** n)
    return Pow(b, n)


def diff(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``'t'`` or ``'x'``."""
    if var not in VARIABLES:
        raise ValueError(f"unknown variable {var!r}")
    return _diff(e, var)


@lru_cache(maxsize=8192)
def _diff(e: Expr, v: str) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Add):
        return add(_diff(e.left, v), _diff(e.right, v))
    if isinstance(e, Sub):
        return sub(_diff(e.left, v), _diff(e.right, v))
    if isinstance(e, Mul):
        return add(mul(_diff(e.left, v), e.right), mul(e.left, _diff(e.right, v)))
    if isinstance(e, Div):
        da, db = _diff(e.left, v), _diff(e.right, v)
        if _is(db, 0.0):
            return div(da, e.right)
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, 2))
    if isinstance(e, Pow):
        db = _diff(e.base, v)
        return mul(mul(Const(float(e.exponent)), power(e.base, e.exponent - 1)), db)
    if isinstance(e, Call):
        du = _diff(e.arg, v)
        if _is(du, 0.0):
            return ZERO
        u = e.arg
        if e.func == "sin":
            outer = Call("cos", u)
        elif e.func == "cos":
            outer = sub(ZERO, Call("sin", u))
        elif e.func == "exp":
            outer = e
        elif e.func == "jap":
            outer = div(u, e)
        else:
            outer = Call(e.func, u, e.order + 1)
        return mul(outer, du)
    raise TypeError(f"not an expression node: {e!r}")


def constant_value(e: Expr):
    """The value of ``e`` if it is a literal constant, else ``None``."""
    return e.value if isinstance(e, Const) else None


def is_zero(e: Expr) -> bool:
    return _is(e, 0.0)


def depends_on(e: Expr, var: str) -> bool:
    if isinstance(e, Var):
        return e.name == var
    if isinstance(e, Const):
        return False
    if isinstance(e, Pow):
        return depends_on(e.base, var)
    if isinstance(e, Call):
        return depends_on(e.arg, var)
    return depends_on(e.left, var) or depends_on(e.right, var)


def fd_derivative(e: Expr, var: str, t: float, x: float, step: float = 1e-3) -> float:
    """Fourth-order central difference of ``e`` in ``var`` (test oracle)."""
    def f(d):
        return evaluate(e, t + d, x) if var == "t" else evaluate(e, t, x + d)
    return (-f(2 * step) + 8 * f(step) - 8 * f(-step) + f(-2 * step)) / (12 * step)

