"""Expression language for vector fields f(x, u, w).

A small arithmetic grammar (+, -, *, /, integer powers, and the elementary
functions tanh/exp/sin/cos/sqrt/abs/sign) over declared variables
x1..xn, u1..up, w1..wq. Parsed expressions evaluate over floats, numpy
arrays, or intervals; interval evaluation composes the tightest primitive
images, so it is the natural inclusion function of the expression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .intervals import (
    DomainError,
    Interval,
    IntervalMatrix,
    IntervalVector,
    k_add,
    k_abs,
    k_cos,
    k_div,
    k_exp,
    k_mul,
    k_neg,
    k_pow_int,
    k_sign,
    k_sin,
    k_sqrt,
    k_sub,
    k_tanh,
)

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "VectorField",
    "SymbolicJacobians",
    "ParseError",
    "parse_expr",
    "parse_vector_field",
    "load_system",
    "save_system",
    "differentiate",
]

_UNARY_FUNCS = ("tanh", "exp", "sin", "cos", "sqrt", "abs", "sign")

_KIND_PREFIX = {"x": 0, "u": 1, "w": 2}


class ParseError(ValueError):
    def __init__(self, msg: str, col: int):
        super().__init__(f"{msg} (column {col})")
        self.col = col


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

class Expr:
    """Base class for expression nodes. Nodes are immutable and shareable."""


    def eval(self, x, u=None, w=None):
        """Evaluate over floats or numpy arrays (last axis is the variable)."""
        x = np.asarray(x, dtype=float)
        u = np.zeros(0) if u is None else np.asarray(u, dtype=float)
        w = np.zeros(0) if w is None else np.asarray(w, dtype=float)
        return self._ev((x, u, w))

    def eval_interval(self, xbox: IntervalVector,
                      ubox: IntervalVector | None = None,
                      wbox: IntervalVector | None = None) -> Interval:
        """Natural inclusion: the expression image over the argument boxes."""
        empty = (np.zeros(0), np.zeros(0))
        env = (
            (xbox.lo, xbox.hi),
            empty if ubox is None else (ubox.lo, ubox.hi),
            empty if wbox is None else (wbox.lo, wbox.hi),
        )
        lo, hi = self._iv(env)
        return Interval(float(lo), float(hi))

    def eval_interval_arrays(self, env):
        """Batched interval evaluation; env holds (lo, hi) array pairs."""
        return self._iv(env)

    def __str__(self):
        return self._fmt(0)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float


    def _ev(self, env):
        return self.value

    def _iv(self, env):
        return self.value, self.value

    def _fmt(self, prec):
        if self.value < 0:
            s = repr(self.value)
            return f"({s})" if prec > 0 else s
        return repr(self.value)


@dataclass(frozen=True, slots=True)
class Var(Expr):
    kind: int  # 0 = x, 1 = u, 2 = w
    index: int  # zero-based
    name: str


    def _ev(self, env):
        return env[self.kind][..., self.index]

    def _iv(self, env):
        lo, hi = env[self.kind]
        return lo[..., self.index], hi[..., self.index]

    def _fmt(self, prec):
        return self.name


_UNARY_EV = {
    "neg": lambda v: -v,
    "tanh": np.tanh,
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

_UNARY_IV = {
    "neg": k_neg,
    "tanh": k_tanh,
    "exp": k_exp,
    "sin": k_sin,
    "cos": k_cos,
    "sqrt": k_sqrt,
    "abs": k_abs,
    "sign": k_sign,
}


@dataclass(frozen=True, slots=True)
class Unary(Expr):
    op: str
    child: Expr


    def _ev(self, env):
        v = self.child._ev(env)
        if self.op == "sign":
            if np.any(np.asarray(v) == 0.0):
                raise DomainError("sign", 0.0, 0.0)
            return np.sign(v)
        if self.op == "sqrt" and np.any(np.asarray(v) < 0.0):
            raise DomainError("sqrt", float(np.min(v)), float(np.min(v)))
        return _UNARY_EV[self.op](v)

    def _iv(self, env):
        return _UNARY_IV[self.op](*self.child._iv(env))

    def _fmt(self, prec):
        if self.op == "neg":
            s = f"-{self.child._fmt(3)}"
            return f"({s})" if prec > 2 else s
        return f"{self.op}({self.child._fmt(0)})"


@dataclass(frozen=True, slots=True)
class Binary(Expr):
    op: str  # "+", "-", "*", "/", "^" (integer power; right child is Const)
    left: Expr
    right: Expr


    def _ev(self, env):
        a = self.left._ev(env)
        if self.op == "^":
            return np.power(a, int(self.right.value))
        b = self.right._ev(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        blo = np.asarray(b)
        if self.op == "/":
            if np.any(blo == 0.0):
                raise DomainError("divide", 0.0, 0.0)
            return a / b
        raise AssertionError(self.op)

    def _iv(self, env):
        alo, ahi = self.left._iv(env)
        if self.op == "^":
            return k_pow_int(alo, ahi, int(self.right.value))
        blo, bhi = self.right._iv(env)
        if self.op == "+":
            return k_add(alo, ahi, blo, bhi)
        if self.op == "-":
            return k_sub(alo, ahi, blo, bhi)
        if self.op == "*":
            return k_mul(alo, ahi, blo, bhi)
        if self.op == "/":
            return k_div(alo, ahi, blo, bhi)
        raise AssertionError(self.op)

    def _fmt(self, prec):
        lvl = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[self.op]
        left = self.left._fmt(lvl if self.op != "^" else 5)
        # right side binds one tighter for the non-commutative operators
        right_lvl = lvl + 1 if self.op in ("-", "/") else lvl
        if self.op == "^":
            s = f"{left}^{int(self.right.value)}"
        else:
            s = f"{left} {self.op} {self.right._fmt(right_lvl)}"
        return f"({s})" if prec > lvl else s


# ---------------------------------------------------------------------------
# smart constructors with constant folding
# ---------------------------------------------------------------------------

def _const(v) -> Const:
    return Const(float(v))


def _is_const(e: Expr, v=None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return _const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Binary("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return _const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Binary("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return _const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Binary("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b) and b.value != 0.0 and _is_const(a):
        return _const(a.value / b.value)
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return _const(0.0)
    if _is_const(b, 1.0):
        return a
    return Binary("/", a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return _const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.child
    return Unary("neg", a)


def pow_int(a: Expr, n: int) -> Expr:
    if n == 0:
        return _const(1.0)
    if n == 1:
        return a
    if _is_const(a):
        return _const(a.value ** n)
    return Binary("^", a, _const(n))


def unary(op: str, a: Expr) -> Expr:
    if _is_const(a) and op != "sign":
        return _const(_UNARY_EV[op](a.value))
    return Unary(op, a)


# ---------------------------------------------------------------------------
# parser (recursive descent; pow > unary minus > mul/div > add/sub)
# ---------------------------------------------------------------------------

class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        c = self.peek()
        self.pos += 1
        return c

    def expect(self, c: str):
        if self.peek() != c:
            raise ParseError(f"expected {c!r}", self.pos + 1)
        self.pos += 1

    def number(self) -> float:
        self._skip_ws()
        start = self.pos
        t = self.text
        n = len(t)
        while self.pos < n and (t[self.pos].isdigit() or t[self.pos] == "."):
            self.pos += 1
        if self.pos < n and t[self.pos] in "eE":
            save = self.pos
            self.pos += 1
            if self.pos < n and t[self.pos] in "+-":
                self.pos += 1
            if self.pos < n and t[self.pos].isdigit():
                while self.pos < n and t[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = save
        try:
            return float(t[start:self.pos])
        except ValueError:
            raise ParseError(f"bad number {t[start:self.pos]!r}", start + 1) from None

    def ident(self) -> str:
        self._skip_ws()
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isalnum() or t[self.pos] == "_"):
            self.pos += 1
        return t[start:self.pos]

    def integer(self) -> int:
        self._skip_ws()
        start = self.pos
        if self.peek() == "-":
            self.pos += 1
        t = self.text
        while self.pos < len(t) and t[self.pos].isdigit():
            self.pos += 1
        tok = t[start:self.pos]
        if self.pos < len(t) and t[self.pos] == ".":
            raise ParseError("exponent must be an integer literal", start + 1)
        try:
            return int(tok)
        except ValueError:
            raise ParseError("exponent must be an integer literal", start + 1) from None


class _Parser:
    def __init__(self, text: str, dims: tuple[int, int, int]):
        self.toks = _Tokens(text)
        self.dims = dims

    def parse(self) -> Expr:
        e = self.expr()
        if self.toks.peek() != "":
            raise ParseError(f"unexpected {self.toks.peek()!r}", self.toks.pos + 1)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.toks.peek() and self.toks.peek() in "+-":
            op = self.toks.take()
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.toks.peek() and self.toks.peek() in "*/":
            op = self.toks.take()
            rhs = self.factor()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def factor(self) -> Expr:
        if self.toks.peek() == "-":
            self.toks.take()
            return neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        while self.toks.peek() == "^":
            self.toks.take()
            e = pow_int(e, self.toks.integer())
        return e

    def atom(self) -> Expr:
        c = self.toks.peek()
        if c == "(":
            self.toks.take()
            e = self.expr()
            self.toks.expect(")")
            return e
        if c.isdigit() or c == ".":
            return _const(self.toks.number())
        if c.isalpha() or c == "_":
            start = self.toks.pos
            name = self.toks.ident()
            if self.toks.peek() == "(":
                if name not in _UNARY_FUNCS:
                    raise ParseError(f"unknown function {name!r}", start + 1)
                self.toks.take()
                arg = self.expr()
                self.toks.expect(")")
                return unary(name, arg)
            return self.variable(name, start)
        raise ParseError(f"unexpected {c!r}" if c else "unexpected end of input",
                         self.toks.pos + 1)

    def variable(self, name: str, start: int) -> Var:
        kind = _KIND_PREFIX.get(name[:1])
        if kind is None or not name[1:].isdigit():
            raise ParseError(f"unknown identifier {name!r}", start + 1)
        idx = int(name[1:]) - 1
        if not (0 <= idx < self.dims[kind]):
            raise ParseError(
                f"variable {name!r} out of range (declared dim {self.dims[kind]})",
                start + 1)
        return Var(kind, idx, name)


def parse_expr(text: str, dims: tuple[int, int, int]) -> Expr:
    """Parse one expression over x1..xn, u1..up, w1..wq."""
    return _Parser(text, dims).parse()


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def differentiate(e: Expr, var: Var) -> Expr:
    """Symbolic partial derivative of e with respect to var, constant-folded."""
    if isinstance(e, Const):
        return _const(0.0)
    if isinstance(e, Var):
        hit = e.kind == var.kind and e.index == var.index
        return _const(1.0 if hit else 0.0)
    if isinstance(e, Unary):
        d = differentiate(e.child, var)
        c = e.child
        if e.op == "neg":
            return neg(d)
        if e.op == "tanh":
            return mul(sub(_const(1.0), pow_int(unary("tanh", c), 2)), d)
        if e.op == "exp":
            return mul(unary("exp", c), d)
        if e.op == "sin":
            return mul(unary("cos", c), d)
        if e.op == "cos":
            return neg(mul(unary("sin", c), d))
        if e.op == "sqrt":
            return div(d, mul(_const(2.0), unary("sqrt", c)))
        if e.op == "abs":
            return mul(unary("sign", c), d)
        if e.op == "sign":
            # zero a.e.; the kink itself is already a domain error for sign
            return _const(0.0)
        raise AssertionError(e.op)
    if isinstance(e, Binary):
        if e.op == "^":
            n = int(e.right.value)
            d = differentiate(e.left, var)
            return mul(mul(_const(n), pow_int(e.left, n - 1)), d)
        da = differentiate(e.left, var)
        db = differentiate(e.right, var)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, e.right), mul(e.left, db))
        if e.op == "/":
            num = sub(mul(da, e.right), mul(e.left, db))
            return div(num, pow_int(e.right, 2))
    raise AssertionError(type(e))


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------

def _var(kind: int, idx: int) -> Var:
    return Var(kind, idx, f"{'xuw'[kind]}{idx + 1}")


@dataclass(frozen=True)
class SymbolicJacobians:
    """Entry-wise partial derivatives of a vector field: J_s[i][j] = df_i/ds_j."""

    j_x: tuple[tuple[Expr, ...], ...]
    j_u: tuple[tuple[Expr, ...], ...]
    j_w: tuple[tuple[Expr, ...], ...]


class VectorField:
    """A vector field f: R^n x R^p x R^q -> R^n given by component expressions."""

    def __init__(self, n: int, p: int, q: int, components: Sequence[Expr]):
        if len(components) != n:
            raise ValueError(f"expected {n} component expressions, got {len(components)}")
        self.n = n
        self.p = p
        self.q = q
        self.components = tuple(components)
        self._jac: SymbolicJacobians | None = None

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.n, self.p, self.q

    def __call__(self, x, u=None, w=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.zeros(self.p) if u is None else np.asarray(u, dtype=float)
        w = np.zeros(self.q) if w is None else np.asarray(w, dtype=float)
        env = (x, u, w)
        cols = [np.broadcast_to(np.asarray(c._ev(env), dtype=float), x.shape[:-1])
                for c in self.components]
        return np.stack(cols, axis=-1)

    def eval_interval(self, xbox: IntervalVector,
                      ubox: IntervalVector | None = None,
                      wbox: IntervalVector | None = None) -> IntervalVector:
        """Natural inclusion function of f over the argument boxes."""
        its = [c.eval_interval(xbox, ubox, wbox) for c in self.components]
        return IntervalVector.from_intervals(its)

    def jacobians(self) -> SymbolicJacobians:
        if self._jac is None:
            jx = tuple(tuple(differentiate(c, _var(0, j)) for j in range(self.n))
                       for c in self.components)
            ju = tuple(tuple(differentiate(c, _var(1, j)) for j in range(self.p))
                       for c in self.components)
            jw = tuple(tuple(differentiate(c, _var(2, j)) for j in range(self.q))
                       for c in self.components)
            self._jac = SymbolicJacobians(jx, ju, jw)
        return self._jac

    def jacobian_point(self, which: str, x, u=None, w=None) -> np.ndarray:
        """Real Jacobian matrix d f / d{which} at a point, which in {x,u,w}."""
        jac = getattr(self.jacobians(), f"j_{which}")
        x = np.asarray(x, dtype=float)
        u = np.zeros(self.p) if u is None else np.asarray(u, dtype=float)
        w = np.zeros(self.q) if w is None else np.asarray(w, dtype=float)
        env = (x, u, w)
        return np.array([[float(e._ev(env)) for e in row] for row in jac])

    def jacobian_interval(self, which: str, xbox: IntervalVector,
                          ubox: IntervalVector | None = None,
                          wbox: IntervalVector | None = None) -> IntervalMatrix:
        """Interval enclosure of d f / d{which} over the argument boxes."""
        jac = getattr(self.jacobians(), f"j_{which}")
        if not jac or not jac[0]:
            ncols = {"x": self.n, "u": self.p, "w": self.q}[which]
            return IntervalMatrix(np.zeros((self.n, ncols)), np.zeros((self.n, ncols)))
        cells = [[e.eval_interval(xbox, ubox, wbox) for e in row] for row in jac]
        lo = np.array([[c.lo for c in row] for row in cells])
        hi = np.array([[c.hi for c in row] for row in cells])
        return IntervalMatrix(lo, hi)

    def __repr__(self):
        comps = "; ".join(str(c) for c in self.components)
        return f"VectorField(n={self.n}, p={self.p}, q={self.q}: {comps})"


def parse_vector_field(texts: Sequence[str], dims: tuple[int, int, int]) -> VectorField:
    n, p, q = dims
    return VectorField(n, p, q, [parse_expr(t, dims) for t in texts])


def load_system(path) -> VectorField:
    """Load a vector field from JSON: {"n":..,"p":..,"q":..,"f":[...]}."""
    with open(path) as fh:
        doc = json.load(fh)
    dims = (int(doc["n"]), int(doc["p"]), int(doc["q"]))
    return parse_vector_field(doc["f"], dims)


def save_system(vf: VectorField, path) -> None:
    doc = {"n": vf.n, "p": vf.p, "q": vf.q,
           "f": [str(c) for c in vf.components]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
