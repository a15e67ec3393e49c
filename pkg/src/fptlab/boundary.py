"""
Moving boundaries f(t): parsing, symbolic differentiation and convexity checks.

The expression grammar is deliberately tiny and closed under differentiation:

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' signed_atom)*
    atom   := NUMBER | 't' | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := exp | cosh | sinh

Exponents of '^' must be free of ``t``. All binary operators, including '^',
associate to the left.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "BoundaryExpr",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Func",
    "Boundary",
    "BoundaryError",
    "BoundaryParseError",
    "LexicalError",
    "BoundarySyntaxError",
    "NonConstantExponentError",
    "NonPositiveLevelError",
    "ConvexityError",
    "parse_boundary",
    "differentiate",
    "pretty",
    "build_boundary",
    "potential",
    "CORPUS",
    "corpus_boundary",
    "TOL_CONVEX",
]

TOL_CONVEX = 1e-12


class BoundaryError(ValueError):
    """Base class for every boundary ingestion or validation failure."""


class BoundaryParseError(BoundaryError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class LexicalError(BoundaryParseError):
    pass


class BoundarySyntaxError(BoundaryParseError):
    pass


class NonConstantExponentError(BoundaryParseError):
    pass


class NonPositiveLevelError(BoundaryError):
    pass


class ConvexityError(BoundaryError):
    def __init__(self, t: float, value: float, n_bad: int):
        super().__init__(
            f"convexity violated: f''({t:.6g}) = {value:.6g} < 0 "
            f"({n_bad} grid point(s) below -{TOL_CONVEX:g})"
        )
        self.t = t
        self.value = value
        self.n_bad = n_bad


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class BoundaryExpr:
    """Immutable expression node. ``evaluate`` accepts floats or numpy arrays."""

    __slots__ = ()

    def evaluate(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.evaluate(t)

    def depends_on_t(self) -> bool:
        raise NotImplementedError

    def __str__(self) -> str:
        return pretty(self)


@dataclass(frozen=True, eq=True)
class Const(BoundaryExpr):
    value: float

    def evaluate(self, t):
        if isinstance(t, np.ndarray):
            return np.full(t.shape, self.value, dtype=float)
        return self.value

    def depends_on_t(self):
        return False


@dataclass(frozen=True, eq=True)
class Var(BoundaryExpr):
    def evaluate(self, t):
        return t

    def depends_on_t(self):
        return True


@dataclass(frozen=True, eq=True)
class Neg(BoundaryExpr):
    arg: BoundaryExpr

    def evaluate(self, t):
        return -self.arg.evaluate(t)

    def depends_on_t(self):
        return self.arg.depends_on_t()


@dataclass(frozen=True, eq=True)
class _Binary(BoundaryExpr):
    left: BoundaryExpr
    right: BoundaryExpr

    def depends_on_t(self):
        return self.left.depends_on_t() or self.right.depends_on_t()


class Add(_Binary):
    def evaluate(self, t):
        return self.left.evaluate(t) + self.right.evaluate(t)


class Sub(_Binary):
    def evaluate(self, t):
        return self.left.evaluate(t) - self.right.evaluate(t)


class Mul(_Binary):
    def evaluate(self, t):
        return self.left.evaluate(t) * self.right.evaluate(t)


class Div(_Binary):
    def evaluate(self, t):
        return self.left.evaluate(t) / self.right.evaluate(t)


@dataclass(frozen=True, eq=True)
class Pow(BoundaryExpr):
    base: BoundaryExpr
    exponent: float

    def evaluate(self, t):
        b = self.base.evaluate(t)
        if isinstance(b, np.ndarray):
            return np.power(b, self.exponent)
        if self.exponent == int(self.exponent):
            return b ** int(self.exponent)
        return b ** self.exponent

    def depends_on_t(self):
        return self.base.depends_on_t()


_FUNCS: dict[str, Callable] = {"exp": np.exp, "cosh": np.cosh, "sinh": np.sinh}
_SCALAR_FUNCS: dict[str, Callable[[float], float]] = {
    "exp": math.exp,
    "cosh": math.cosh,
    "sinh": math.sinh,
}


@dataclass(frozen=True, eq=True)
class Func(BoundaryExpr):
    name: str
    arg: BoundaryExpr

    def __post_init__(self):
        if self.name not in _FUNCS:
            raise BoundaryError(f"unknown function {self.name!r}")

    def evaluate(self, t):
        x = self.arg.evaluate(t)
        if isinstance(x, np.ndarray):
            return _FUNCS[self.name](x)
        return _SCALAR_FUNCS[self.name](x)

    def depends_on_t(self):
        return self.arg.depends_on_t()


# ---------------------------------------------------------------------------
# Lexer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num", "t", "func", "op", "end"
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise LexicalError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        lexeme = m.group()
        if kind == "name":
            if lexeme == "t":
                tokens.append(_Token("t", lexeme, pos))
            elif lexeme in _FUNCS:
                tokens.append(_Token("func", lexeme, pos))
            else:
                raise LexicalError(f"unknown identifier {lexeme!r}", pos)
        elif kind != "ws":
            tokens.append(_Token(kind, lexeme, pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def _advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def _expect(self, text: str) -> _Token:
        if self.tok.text != text or self.tok.kind == "end":
            raise BoundarySyntaxError(f"expected {text!r}", self.tok.offset)
        return self._advance()

    def parse(self) -> BoundaryExpr:
        if self.tok.kind == "end":
            raise BoundarySyntaxError("empty expression", 0)
        node = self.expr()
        if self.tok.kind != "end":
            if self.tok.text == ")":
                raise BoundarySyntaxError("unbalanced ')'", self.tok.offset)
            raise BoundarySyntaxError(f"unexpected token {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> BoundaryExpr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self._advance().text
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> BoundaryExpr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self._advance().text
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def unary(self) -> BoundaryExpr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self._advance()
            return Neg(self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self._advance()
            return self.unary()
        return self.power()

    def power(self) -> BoundaryExpr:
        node = self.atom()
        while self.tok.kind == "op" and self.tok.text == "^":
            self._advance()
            start = self.tok.offset
            # a sign is allowed directly after '^' so that t^-1 parses
            negate = False
            while self.tok.kind == "op" and self.tok.text in "+-":
                negate ^= self._advance().text == "-"
            exponent = self.atom()
            if exponent.depends_on_t():
                raise NonConstantExponentError("exponent of '^' depends on t", start)
            value = float(exponent.evaluate(0.0))
            node = Pow(node, -value if negate else value)
        return node

    def atom(self) -> BoundaryExpr:
        tok = self.tok
        if tok.kind == "num":
            self._advance()
            return Const(float(tok.text))
        if tok.kind == "t":
            self._advance()
            return Var()
        if tok.kind == "func":
            self._advance()
            opening = self._expect("(").offset
            arg = self.expr()
            self._close_paren(opening)
            return Func(tok.text, arg)
        if tok.kind == "op" and tok.text == "(":
            self._advance()
            node = self.expr()
            self._close_paren(tok.offset)
            return node
        if tok.kind == "end":
            raise BoundarySyntaxError("unexpected end of expression", tok.offset)
        raise BoundarySyntaxError(f"dangling operator before {tok.text!r}", tok.offset)

    def _close_paren(self, opening: int):
        if self.tok.kind == "end":
            raise BoundarySyntaxError(
                f"syntax error: unbalanced '(' (opened at offset {opening})", self.tok.offset
            )
        self._expect(")")


def parse_boundary(text: str) -> BoundaryExpr:
    """Parse an expression string into a :class:`BoundaryExpr`.

    >>> parse_boundary("1 + 0.5*t^2").evaluate(2.0)
    3.0
    """
    if not isinstance(text, str) or not text.strip():
        raise BoundarySyntaxError("empty expression", 0)
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Pretty printing
# ---------------------------------------------------------------------------

_BINARY_SYMBOL = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


def _fmt_number(x: float) -> str:
    text = repr(float(x))
    if x < 0:
        return f"(-{text[1:]})"
    return text


def pretty(e: BoundaryExpr) -> str:
    """Canonical fully parenthesized form; re-parses to the same values."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return "t"
    if isinstance(e, Neg):
        return f"(-{pretty(e.arg)})"
    if isinstance(e, Pow):
        return f"({pretty(e.base)} ^ {_fmt_number(e.exponent)})"
    if isinstance(e, Func):
        return f"{e.name}({pretty(e.arg)})"
    if isinstance(e, _Binary):
        return f"({pretty(e.left)} {_BINARY_SYMBOL[type(e)]} {pretty(e.right)})"
    raise TypeError(f"not a boundary expression: {e!r}")


# ---------------------------------------------------------------------------
# Differentiation with light constant folding
# ---------------------------------------------------------------------------

ZERO = Const(0.0)
ONE = Const(1.0)


def _is_const(e: BoundaryExpr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def _add(a: BoundaryExpr, b: BoundaryExpr) -> BoundaryExpr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def _sub(a: BoundaryExpr, b: BoundaryExpr) -> BoundaryExpr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return Sub(a, b)


def _neg(a: BoundaryExpr) -> BoundaryExpr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: BoundaryExpr, b: BoundaryExpr) -> BoundaryExpr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def _div(a: BoundaryExpr, b: BoundaryExpr) -> BoundaryExpr:
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    return Div(a, b)


def _pow(base: BoundaryExpr, n: float) -> BoundaryExpr:
    if n == 0.0:
        return ONE
    if n == 1.0:
        return base
    if _is_const(base):
        return Const(base.value**n)
    return Pow(base, n)


def differentiate(e: BoundaryExpr) -> BoundaryExpr:
    """d/dt of ``e``, expressed in the same node set."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE
    if isinstance(e, Neg):
        return _neg(differentiate(e.arg))
    if isinstance(e, Add):
        return _add(differentiate(e.left), differentiate(e.right))
    if isinstance(e, Sub):
        return _sub(differentiate(e.left), differentiate(e.right))
    if isinstance(e, Mul):
        u, v = e.left, e.right
        return _add(_mul(differentiate(u), v), _mul(u, differentiate(v)))
    if isinstance(e, Div):
        u, v = e.left, e.right
        num = _sub(_mul(differentiate(u), v), _mul(u, differentiate(v)))
        return _div(num, _pow(v, 2.0))
    if isinstance(e, Pow):
        du = differentiate(e.base)
        return _mul(_mul(Const(e.exponent), _pow(e.base, e.exponent - 1.0)), du)
    if isinstance(e, Func):
        du = differentiate(e.arg)
        outer = {
            "exp": Func("exp", e.arg),
            "cosh": Func("sinh", e.arg),
            "sinh": Func("cosh", e.arg),
        }[e.name]
        return _mul(outer, du)
    raise TypeError(f"not a boundary expression: {e!r}")


# ---------------------------------------------------------------------------
# Validated boundary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Boundary:
    """A convexity-checked boundary with its first two derivatives.

    ``convexity_grid`` is the grid on which f'' >= -TOL_CONVEX was certified;
    negative curvature strictly between grid points is not detected.
    """

    expr: BoundaryExpr
    d1: BoundaryExpr
    d2: BoundaryExpr
    initial_level: float
    convexity_grid: np.ndarray = field(repr=False, compare=False)
    convexity_checked: bool = True
    source: str = ""
    # per-instance memo for boundary integrals; contents only, never identity
    cache: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def f(self, t):
        return self.expr.evaluate(t)

    def fp(self, t):
        return self.d1.evaluate(t)

    def fpp(self, t):
        return self.d2.evaluate(t)

    @property
    def a(self) -> float:
        return self.initial_level

    def __str__(self) -> str:
        return self.source or pretty(self.expr)


def build_boundary(
    e: BoundaryExpr | str,
    grid=None,
    s_max: float = 10.0,
    n_grid: int = 1024,
) -> Boundary:
    """Differentiate twice, check f(0) > 0 and f'' >= -1e-12 on ``grid``.

    The default grid is ``n_grid`` uniform points on [0, s_max].
    """
    source = e if isinstance(e, str) else ""
    if isinstance(e, str):
        e = parse_boundary(e)
    if grid is None:
        grid = np.linspace(0.0, s_max, n_grid)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise BoundaryError("convexity grid must be a finite increasing set of t >= 0")

    d1 = differentiate(e)
    d2 = differentiate(d1)
    a = float(e.evaluate(0.0))
    if not math.isfinite(a) or a <= 0.0:
        raise NonPositiveLevelError(f"initial level f(0) = {a:g} must be > 0")

    curv = np.asarray(d2.evaluate(grid), dtype=float)
    if curv.shape != grid.shape:
        curv = np.broadcast_to(curv, grid.shape)
    bad = ~(curv >= -TOL_CONVEX)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ConvexityError(float(grid[i]), float(curv[i]), int(bad.sum()))

    return Boundary(e, d1, d2, a, grid, True, source)


def potential(bd: Boundary, u, x):
    """Killing rate k(u, x) = f''(u) * x."""
    return bd.fpp(u) * x


CORPUS: dict[str, str] = {
    "const": "1",
    "linear": "1 + t",
    "quad_quarter": "2 + 0.25*t^2",
    "quad_half": "1 + t^2/2",
    "cosh": "cosh(t)",
}


def corpus_boundary(name: str, s_max: float = 10.0) -> Boundary:
    return build_boundary(CORPUS[name], s_max=s_max)
