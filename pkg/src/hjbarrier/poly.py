"""Sparse multivariate polynomials in canonical monomial form.

A :class:`PolyExpr` over ``k`` variables is a tuple of ``(exponents,
coefficient)`` pairs with distinct exponent vectors, sorted, and no zero
coefficients.  Systems use the variable layout ``x1, ..., xn`` for state
polynomials and ``x1, ..., xn, t`` for certificates.

The text grammar (see README for the EBNF) is a sum of products::

    -0.5*x1^2*t + x2 - 3

with ``^`` or ``**`` for powers and ``x`` accepted as an alias of ``x1`` when
there is a single state variable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, PolyParseError
from .intervals import poly_bounds


def _canonical(nvars, items):
    acc = {}
    for exps, coeff in items:
        exps = tuple(int(e) for e in exps)
        if len(exps) != nvars:
            raise InputError(f"exponent vector {exps} has length {len(exps)}, expected {nvars}")
        if any(e < 0 for e in exps):
            raise InputError(f"negative exponent in {exps}")
        acc[exps] = acc.get(exps, 0.0) + float(coeff)
    return tuple(sorted((e, c) for e, c in acc.items() if c != 0.0))


@dataclass(frozen=True)
class PolyExpr:
    nvars: int
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", _canonical(self.nvars, self.terms))

    # construction ----------------------------------------------------------

    @classmethod
    def from_terms(cls, nvars: int, terms: Iterable) -> "PolyExpr":
        """Build from ``(coefficient, exponents)`` pairs; duplicates are merged."""
        return cls(nvars, tuple((tuple(e), c) for c, e in terms))

    @classmethod
    def constant(cls, nvars: int, value: float) -> "PolyExpr":
        return cls(nvars, (((0,) * nvars, value),))

    @classmethod
    def variable(cls, nvars: int, index: int) -> "PolyExpr":
        exps = [0] * nvars
        exps[index] = 1
        return cls(nvars, ((tuple(exps), 1.0),))

    @classmethod
    def zero(cls, nvars: int) -> "PolyExpr":
        return cls(nvars, ())

    # cached array views ----------------------------------------------------

    @cached_property
    def exps(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((0, self.nvars), dtype=np.int64)
        return np.array([e for e, _ in self.terms], dtype=np.int64).reshape(-1, self.nvars)

    @cached_property
    def coeffs(self) -> np.ndarray:
        return np.array([c for _, c in self.terms], dtype=float)

    # algebra ---------------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, PolyExpr):
            if other.nvars != self.nvars:
                raise InputError(f"variable count mismatch: {self.nvars} vs {other.nvars}")
            return other
        return PolyExpr.constant(self.nvars, float(other))

    def __add__(self, other):
        other = self._coerce(other)
        return PolyExpr(self.nvars, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return PolyExpr(self.nvars, tuple((e, -c) for e, c in self.terms))

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, PolyExpr):
            s = float(other)
            return PolyExpr(self.nvars, tuple((e, c * s) for e, c in self.terms))
        other = self._coerce(other)
        items = []
        for e1, c1 in self.terms:
            for e2, c2 in other.terms:
                items.append((tuple(a + b for a, b in zip(e1, e2)), c1 * c2))
        return PolyExpr(self.nvars, tuple(items))

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = PolyExpr.constant(self.nvars, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def diff(self, index: int) -> "PolyExpr":
        items = []
        for e, c in self.terms:
            if e[index] > 0:
                e2 = list(e)
                e2[index] -= 1
                items.append((tuple(e2), c * e[index]))
        return PolyExpr(self.nvars, tuple(items))

    def gradient(self, indices: Sequence[int] | None = None) -> list:
        if indices is None:
            indices = range(self.nvars)
        return [self.diff(i) for i in indices]

    def extend(self, nvars: int) -> "PolyExpr":
        """Same polynomial with extra trailing variables that it does not use."""
        if nvars < self.nvars:
            raise InputError("cannot shrink the variable set")
        pad = (0,) * (nvars - self.nvars)
        return PolyExpr(nvars, tuple((e + pad, c) for e, c in self.terms))

    def restrict(self, nvars: int) -> "PolyExpr":
        """Drop trailing variables; they must not occur."""
        if any(any(e[nvars:]) for e, _ in self.terms):
            raise InputError("polynomial depends on dropped variables")
        return PolyExpr(nvars, tuple((e[:nvars], c) for e, c in self.terms))

    def substitute(self, index: int, value: float) -> "PolyExpr":
        """Fix one variable to a number (the variable stays, with exponent 0)."""
        items = []
        for e, c in self.terms:
            e2 = list(e)
            k = e2[index]
            e2[index] = 0
            items.append((tuple(e2), c * value ** k))
        return PolyExpr(self.nvars, tuple(items))

    # queries ---------------------------------------------------------------

    def depends_on(self, index: int) -> bool:
        return any(e[index] > 0 for e, _ in self.terms)

    def degree(self, index: int | None = None) -> int:
        if not self.terms:
            return 0
        if index is None:
            return max(sum(e) for e, _ in self.terms)
        return max(e[index] for e, _ in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    # evaluation ------------------------------------------------------------

    def __call__(self, points) -> np.ndarray | float:
        """Evaluate at one point ``(k,)`` or a batch ``(N, k)``."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.nvars:
            raise InputError(f"expected {self.nvars} coordinates, got {pts.shape[1]}")
        out = monomial_values(self.exps, pts) @ self.coeffs
        return float(out[0]) if single else out

    def bounds(self, lo, hi):
        """Interval enclosure over boxes; see :func:`hjbarrier.intervals.poly_bounds`."""
        return poly_bounds(self.coeffs, self.exps, lo, hi)

    def __str__(self):
        return format_poly(self, default_names(self.nvars))


def monomial_values(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Matrix of monomial values, shape ``(N, M)``."""
    N = pts.shape[0]
    out = np.ones((N, exps.shape[0]))
    for j in range(exps.shape[1]):
        col = exps[:, j]
        if not col.any():
            continue
        # power table by repeated products, then one gather per variable
        x = pts[:, j]
        table = np.empty((int(col.max()) + 1, N))
        table[0] = 1.0
        for k in range(1, table.shape[0]):
            table[k] = table[k - 1] * x
        out *= table[col].T
    return out


class PolyVector:
    """Several polynomials over the same variables evaluated in one pass."""

    def __init__(self, polys: Sequence[PolyExpr]):
        polys = list(polys)
        if not polys:
            raise InputError("empty polynomial list")
        nvars = polys[0].nvars
        index = {}
        for p in polys:
            if p.nvars != nvars:
                raise InputError("mixed variable counts")
            for e, _ in p.terms:
                index.setdefault(e, len(index))
        self.nvars = nvars
        self.size = len(polys)
        self.exps = np.array(list(index), dtype=np.int64).reshape(-1, nvars)
        self.matrix = np.zeros((len(index), len(polys)))
        for j, p in enumerate(polys):
            for e, c in p.terms:
                self.matrix[index[e], j] = c

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        if self.exps.shape[0] == 0:
            return np.zeros((pts.shape[0], self.size))
        return monomial_values(self.exps, pts) @ self.matrix


# ---------------------------------------------------------------------------
# text form


def default_names(nvars: int, with_time: bool | None = None) -> list:
    """``x1..xn`` (and ``t`` as the last name when ``with_time``)."""
    if with_time is None:
        with_time = False
    n = nvars - 1 if with_time else nvars
    names = [f"x{i + 1}" for i in range(n)]
    if with_time:
        names.append("t")
    return names


def format_poly(p: PolyExpr, names: Sequence[str]) -> str:
    """Render in the parseable grammar; ``parse_poly`` inverts it exactly."""
    if not p.terms:
        return "0"
    pieces = []
    for i, (e, c) in enumerate(reversed(p.terms)):
        factors = []
        for name, k in zip(names, e):
            if k == 1:
                factors.append(name)
            elif k > 1:
                factors.append(f"{name}^{k}")
        mag = abs(c) if i > 0 else c
        body = "*".join([repr(mag)] + factors)
        if i == 0:
            pieces.append(body)
        else:
            pieces.append(("- " if c < 0 else "+ ") + body)
    return " ".join(pieces)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<pow>\*\*|\^)|(?P<op>[-+*]))"
)


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            col = pos + 1 + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise PolyParseError(f"unexpected character {text[col - 1]!r}", column=col)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start + 1))
        pos = m.end()
    return tokens


def parse_poly(text: str, names: Sequence[str], aliases: dict | None = None) -> PolyExpr:
    """Parse polynomial text over the variables ``names``.

    ``aliases`` maps extra spellings to entries of ``names`` (``{"x": "x1"}``).
    """
    lookup = {nm: i for i, nm in enumerate(names)}
    for a, target in (aliases or {}).items():
        lookup[a] = lookup[target]
    nvars = len(names)
    tokens = _tokenize(text)
    if not tokens:
        raise PolyParseError("empty polynomial", column=1)
    pos = 0
    items = []

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, None, len(text) + 1)

    def factor():
        nonlocal pos
        kind, val, col = peek()
        if kind == "num":
            pos += 1
            return float(val), None
        if kind == "name":
            if val not in lookup:
                raise PolyParseError(f"unknown variable {val!r}", column=col)
            pos += 1
            k = 1
            if peek()[0] == "pow":
                pos += 1
                kind2, val2, col2 = peek()
                if kind2 != "num" or not re.fullmatch(r"\d+", val2):
                    raise PolyParseError("exponent must be a non-negative integer", column=col2)
                pos += 1
                k = int(val2)
            return 1.0, (lookup[val], k)
        what = "end of input" if kind is None else repr(val)
        raise PolyParseError(f"expected a number or variable, found {what}", column=col)

    sign = 1.0
    kind, val, _ = peek()
    if kind == "op" and val in "+-":
        sign = -1.0 if val == "-" else 1.0
        pos += 1
    while True:
        coeff = sign
        exps = [0] * nvars
        while True:
            c, var = factor()
            coeff *= c
            if var is not None:
                exps[var[0]] += var[1]
            kind, val, col = peek()
            if kind == "op" and val == "*":
                pos += 1
                continue
            break
        items.append((tuple(exps), coeff))
        kind, val, col = peek()
        if kind is None:
            break
        if kind == "op" and val in "+-":
            sign = -1.0 if val == "-" else 1.0
            pos += 1
            continue
        raise PolyParseError(f"unexpected {val!r}", column=col)
    return PolyExpr(nvars, tuple(items))
