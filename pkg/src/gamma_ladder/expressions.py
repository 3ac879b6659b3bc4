"""Parsing and exact differentiation of periodic potential expressions.

Potentials on the unit torus are written in a small closed-form language:

    F = "sin(2*pi*x1)^2 + 0.2*(1 - cos(2*pi*x1))"

Grammar (no division, exponents must fold to constants):

    expr   := term (('+' | '-') term)*
    term   := unary ('*' unary)*
    unary  := ('+' | '-') unary | power
    power  := atom (('^' | '**') unary)?        right-associative
    atom   := NUMBER | 'pi' | 'x1'..'x9' | ('sin' | 'cos') '(' expr ')'
            | '(' expr ')'

Parsed potentials carry exact symbolic first and second derivatives, so the
downstream Newton refinement and Hessian classification never touch finite
differences.  Every parse is checked for 1-periodicity in each coordinate on
a fixed sample of points; non-periodic input is rejected because the whole
torus construction is meaningless without it.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import NotPeriodicError, PotentialSyntaxError, UnknownSymbolError

PERIODICITY_TOL = 1e-10
_PERIODICITY_SAMPLES = 48


# ---------------------------------------------------------------------------
# tokens

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<pow>\*\*|\^)"
    r"|(?P<op>[+\-*()])"
    r")"
)


@dataclass
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            at = len(text) - len(stripped)
            raise PotentialSyntaxError(f"unexpected character {text[at]!r}", at)
        if m.lastgroup == "number":
            tokens.append(Token("number", m.group("number"), m.start("number")))
        elif m.lastgroup == "ident":
            tokens.append(Token("ident", m.group("ident"), m.start("ident")))
        elif m.lastgroup == "pow":
            tokens.append(Token("pow", m.group("pow"), m.start("pow")))
        else:
            op = m.group("op")
            tokens.append(Token(op, op, m.start("op")))
        pos = m.end()
    return tokens


# ---------------------------------------------------------------------------
# syntax tree with exact differentiation

class Node:
    def diff(self, var: int) -> "Node":
        raise NotImplementedError

    def evaluate(self, coords: np.ndarray):
        """coords has shape (d, ...); returns an array broadcastable to (...)."""
        raise NotImplementedError


@dataclass(frozen=True)
class Const(Node):
    value: float

    def diff(self, var: int) -> Node:
        return Const(0.0)

    def evaluate(self, coords):
        return self.value

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Var(Node):
    index: int  # zero-based

    def diff(self, var: int) -> Node:
        return Const(1.0 if var == self.index else 0.0)

    def evaluate(self, coords):
        return coords[self.index]

    def __str__(self):
        return f"x{self.index + 1}"


@dataclass(frozen=True)
class Add(Node):
    left: Node
    right: Node

    def diff(self, var):
        return make_add(self.left.diff(var), self.right.diff(var))

    def evaluate(self, coords):
        return self.left.evaluate(coords) + self.right.evaluate(coords)

    def __str__(self):
        return f"({self.left} + {self.right})"


@dataclass(frozen=True)
class Mul(Node):
    left: Node
    right: Node

    def diff(self, var):
        return make_add(
            make_mul(self.left.diff(var), self.right),
            make_mul(self.left, self.right.diff(var)),
        )

    def evaluate(self, coords):
        return self.left.evaluate(coords) * self.right.evaluate(coords)

    def __str__(self):
        return f"({self.left} * {self.right})"


@dataclass(frozen=True)
class Pow(Node):
    base: Node
    exponent: float  # folded to a constant at parse time

    def diff(self, var):
        if self.exponent == 0.0:
            return Const(0.0)
        inner = self.base.diff(var)
        return make_mul(
            make_mul(Const(self.exponent), make_pow(self.base, self.exponent - 1.0)),
            inner,
        )

    def evaluate(self, coords):
        base = self.base.evaluate(coords)
        if self.exponent == int(self.exponent):
            return np.power(base, int(self.exponent))
        return np.power(base, self.exponent)

    def __str__(self):
        return f"({self.base} ^ {self.exponent:g})"


@dataclass(frozen=True)
class Call(Node):
    fn: str  # "sin" or "cos"
    arg: Node

    def diff(self, var):
        inner = self.arg.diff(var)
        if self.fn == "sin":
            return make_mul(Call("cos", self.arg), inner)
        return make_mul(Const(-1.0), make_mul(Call("sin", self.arg), inner))

    def evaluate(self, coords):
        arg = self.arg.evaluate(coords)
        return np.sin(arg) if self.fn == "sin" else np.cos(arg)

    def __str__(self):
        return f"{self.fn}({self.arg})"


def make_add(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(a, Const) and a.value == 0.0:
        return b
    if isinstance(b, Const) and b.value == 0.0:
        return a
    return Add(a, b)


def make_mul(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    for c, other in ((a, b), (b, a)):
        if isinstance(c, Const):
            if c.value == 0.0:
                return Const(0.0)
            if c.value == 1.0:
                return other
    return Mul(a, b)


def make_pow(base: Node, exponent: float) -> Node:
    if exponent == 0.0:
        return Const(1.0)
    if exponent == 1.0:
        return base
    if isinstance(base, Const):
        return Const(base.value**exponent)
    return Pow(base, exponent)


# ---------------------------------------------------------------------------
# parser

_VAR_RE = re.compile(r"^x([1-9])$")
_FUNCTIONS = ("sin", "cos")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.cursor = 0
        self.max_var = 0

    def peek(self) -> Token | None:
        return self.tokens[self.cursor] if self.cursor < len(self.tokens) else None

    def advance(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise PotentialSyntaxError("unexpected end of expression", len(self.text))
        self.cursor += 1
        return tok

    def expect(self, kind: str) -> Token:
        tok = self.peek()
        if tok is None or tok.kind != kind:
            pos = tok.pos if tok else len(self.text)
            found = repr(tok.text) if tok else "end of input"
            raise PotentialSyntaxError(f"expected {kind!r}, found {found}", pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok is not None:
            raise PotentialSyntaxError(f"trailing input {tok.text!r}", tok.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while (tok := self.peek()) is not None and tok.kind in ("+", "-"):
            self.advance()
            rhs = self.term()
            if tok.kind == "-":
                rhs = make_mul(Const(-1.0), rhs)
            node = make_add(node, rhs)
        return node

    def term(self) -> Node:
        node = self.unary()
        while (tok := self.peek()) is not None and tok.kind == "*":
            self.advance()
            node = make_mul(node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok is not None and tok.kind in ("+", "-"):
            self.advance()
            inner = self.unary()
            return inner if tok.kind == "+" else make_mul(Const(-1.0), inner)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        tok = self.peek()
        if tok is not None and tok.kind == "pow":
            self.advance()
            exponent = self.unary()
            if not isinstance(exponent, Const):
                raise PotentialSyntaxError("exponents must be constants", tok.pos)
            return make_pow(base, exponent.value)
        return base

    def atom(self) -> Node:
        tok = self.advance()
        if tok.kind == "number":
            return Const(float(tok.text))
        if tok.kind == "(":
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            name = tok.text
            if name == "pi":
                return Const(math.pi)
            if name in _FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(name, arg)
            m = _VAR_RE.match(name)
            if m:
                idx = int(m.group(1))
                self.max_var = max(self.max_var, idx)
                return Var(idx - 1)
            raise UnknownSymbolError(f"unknown symbol {name!r} at position {tok.pos}")
        raise PotentialSyntaxError(f"unexpected token {tok.text!r}", tok.pos)


# ---------------------------------------------------------------------------
# public interface

class Potential:
    """A parsed, 1-periodic potential with exact derivatives.

    Attributes
    ----------
    source : str
        The expression as given.
    dim : int
        Number of torus coordinates.
    """

    def __init__(self, source: str, ast: Node, dim: int):
        self.source = source
        self.dim = dim
        self.ast = ast
        self._grad = [ast.diff(i) for i in range(dim)]
        self._hess = [[self._grad[i].diff(j) for j in range(dim)] for i in range(dim)]

    def _coords(self, points) -> tuple[np.ndarray, tuple]:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 0 or pts.shape[-1] != self.dim:
            raise ValueError(f"points must have trailing dimension {self.dim}")
        return np.moveaxis(pts, -1, 0), pts.shape[:-1]

    def value(self, points) -> np.ndarray:
        coords, shape = self._coords(points)
        return np.broadcast_to(np.asarray(self.ast.evaluate(coords), dtype=float), shape).copy()

    def gradient(self, points) -> np.ndarray:
        coords, shape = self._coords(points)
        out = np.empty(shape + (self.dim,))
        for i, node in enumerate(self._grad):
            out[..., i] = node.evaluate(coords)
        return out

    def hessian(self, points) -> np.ndarray:
        coords, shape = self._coords(points)
        out = np.empty(shape + (self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                out[..., i, j] = self._hess[i][j].evaluate(coords)
        return out

    def __repr__(self):
        return f"Potential({self.source!r}, dim={self.dim})"


def _check_periodicity(pot: Potential) -> None:
    rng = np.random.default_rng(20260814)
    pts = rng.random((_PERIODICITY_SAMPLES, pot.dim))
    base = pot.value(pts)
    scale = max(1.0, float(np.max(np.abs(base))))
    for axis in range(pot.dim):
        shifted = pts.copy()
        shifted[:, axis] += 1.0
        dev = float(np.max(np.abs(pot.value(shifted) - base)))
        if dev > PERIODICITY_TOL * scale:
            raise NotPeriodicError(
                f"potential is not 1-periodic in x{axis + 1} "
                f"(max deviation {dev:.3e})"
            )


def parse_potential(text: str, dim: int | None = None) -> Potential:
    """Parse an expression into a Potential and certify 1-periodicity.

    Parameters
    ----------
    text : str
        Expression in the closed-form language (see module docstring).
    dim : int, optional
        Expected number of coordinates.  When omitted, the dimension is the
        highest coordinate index appearing in the expression (at least 1).

    Raises
    ------
    PotentialSyntaxError, UnknownSymbolError
        Ill-formed input.
    NotPeriodicError
        The expression fails the sampled periodicity check in some axis.
    """
    parser = _Parser(text)
    ast = parser.parse()
    seen = max(parser.max_var, 1)
    if dim is None:
        dim = seen
    elif seen > dim:
        raise UnknownSymbolError(f"expression uses x{seen} but dim={dim}")
    pot = Potential(text, ast, dim)
    _check_periodicity(pot)
    return pot


def load_catalog() -> dict:
    """Named example potentials with their documented critical-point data."""
    payload = resources.files("gamma_ladder").joinpath("catalog.json").read_text()
    return json.loads(payload)


def catalog_potential(name: str) -> Potential:
    """Parse a catalog entry by name."""
    catalog = load_catalog()
    if name not in catalog:
        raise KeyError(f"no catalog potential named {name!r}; have {sorted(catalog)}")
    entry = catalog[name]
    return parse_potential(entry["expression"], dim=entry["dim"])
