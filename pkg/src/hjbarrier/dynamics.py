"""System model: polynomial dynamics with additive-in-disturbance structure.

The state evolves as ``xdot = f1(x) + f2(x) d`` with ``d`` in a box or ball.
Outside a clamp box the field is frozen at its value on the box boundary,
which yields a globally Lipschitz extension that agrees with ``f`` on the
closed safe set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, InputError
from .intervals import Classification, branch_and_bound, mul_bounds, split_boxes
from .poly import PolyExpr, PolyVector

MEMBERSHIP_TOL = 1e-12


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise InputError("box bounds have different lengths")
        if any(not np.isfinite(v) for v in lo + hi):
            raise InputError("box bounds must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise InputError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_pairs(cls, pairs) -> "Box":
        pairs = [tuple(p) for p in pairs]
        if any(len(p) != 2 for p in pairs):
            raise InputError("box must be given as [lower, upper] pairs")
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def pairs(self) -> list:
        return [[a, b] for a, b in zip(self.lower, self.upper)]

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_box(self, other: "Box", tol: float = 0.0) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def clamp(self, x) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def vertices(self) -> np.ndarray:
        axes = [sorted({a, b}) for a, b in zip(self.lower, self.upper)]
        return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, self.dim)

    def scaled(self, factor: float) -> "Box":
        """Same center, half-widths multiplied by ``factor``."""
        c, r = self.center, 0.5 * self.widths * factor
        return Box(tuple(c - r), tuple(c + r))


@dataclass(frozen=True)
class DisturbanceSet:
    """Box (per-axis half-widths) or Euclidean ball (scalar radius) around ``center``."""

    kind: str
    center: tuple
    radius: tuple

    def __post_init__(self):
        if self.kind not in ("box", "ball"):
            raise InputError(f"disturbance kind must be 'box' or 'ball', got {self.kind!r}")
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        r = tuple(float(v) for v in np.atleast_1d(self.radius))
        if self.kind == "box" and len(r) != len(c):
            raise InputError("box disturbance needs one half-width per axis")
        if self.kind == "ball" and len(r) != 1:
            raise InputError("ball disturbance needs a scalar radius")
        if any(v < 0 for v in r):
            raise InputError("disturbance radius must be non-negative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @property
    def m(self) -> int:
        return len(self.center)

    @property
    def c(self) -> np.ndarray:
        return np.array(self.center)

    @property
    def r(self) -> np.ndarray:
        return np.array(self.radius)

    def bounding_box(self) -> Box:
        r = self.r if self.kind == "box" else np.full(self.m, self.radius[0])
        return Box(tuple(self.c - r), tuple(self.c + r))

    def contains(self, d, tol: float = MEMBERSHIP_TOL) -> bool:
        d = np.asarray(d, float)
        if self.kind == "box":
            return bool(np.all(np.abs(d - self.c) <= self.r + tol))
        return bool(np.linalg.norm(d - self.c) <= self.radius[0] + tol)

    def vertices(self) -> np.ndarray:
        """Box corners (deduplicated along degenerate axes)."""
        if self.kind != "box":
            raise InputError("a ball has no vertices")
        return self.bounding_box().vertices()

    def maximizer(self, b) -> np.ndarray:
        """``argmax_{d in D} b . d`` for each row of ``b`` (ties go to the upper face)."""
        b = np.atleast_2d(np.asarray(b, float))
        if self.kind == "box":
            return self.c + np.where(b >= 0, 1.0, -1.0) * self.r
        norm = np.linalg.norm(b, axis=1, keepdims=True)
        unit = np.zeros_like(b)
        unit[:, 0] = 1.0
        unit = np.where(norm > 0, b / np.where(norm > 0, norm, 1.0), unit)
        return self.c + self.radius[0] * unit

    def support(self, b) -> np.ndarray:
        """``max_{d in D} b . d`` for each row of ``b``."""
        b = np.atleast_2d(np.asarray(b, float))
        if self.kind == "box":
            return b @ self.c + np.abs(b) @ self.r
        return b @ self.c + self.radius[0] * np.linalg.norm(b, axis=1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "box":
            return self.c + (2 * rng.random((size, self.m)) - 1) * self.r
        g = rng.standard_normal((size, self.m))
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        rad = self.radius[0] * rng.random((size, 1)) ** (1.0 / self.m)
        return self.c + g * rad

    def sample_extreme(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Random vertices (box) or random boundary points (ball)."""
        if self.kind == "box":
            signs = np.where(rng.random((size, self.m)) < 0.5, -1.0, 1.0)
            return self.c + signs * self.r
        g = rng.standard_normal((size, self.m))
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        return self.c + self.radius[0] * g


@dataclass(frozen=True)
class SafeSet:
    """``S = {h < 0}``; ``enclosing`` is the user-declared box that must contain S."""

    h: PolyExpr
    enclosing: Box


@dataclass(frozen=True)
class InitialSet:
    """Either a box, or ``{g <= 0}`` intersected with the box."""

    kind: str
    box: Box
    g: Optional[PolyExpr] = None

    def __post_init__(self):
        if self.kind not in ("box", "sublevel"):
            raise InputError(f"initial set kind must be 'box' or 'sublevel', got {self.kind!r}")
        if self.kind == "sublevel" and self.g is None:
            raise InputError("sublevel initial set needs g")

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        if not self.box.contains(x, tol):
            return False
        return self.g is None or self.g(np.asarray(x, float)) <= tol

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lo, hi = self.box.lo, self.box.hi
        if self.kind == "box":
            return lo + rng.random((size, lo.size)) * (hi - lo)
        out = []
        count = 0
        while count < size:
            cand = lo + rng.random((4 * size, lo.size)) * (hi - lo)
            cand = cand[self.g(cand) <= 0]
            out.append(cand)
            count += len(cand)
            if len(out) > 1000 and count == 0:
                raise ConfigurationError("initial set appears to be empty")
        return np.concatenate(out)[:size]


@dataclass(frozen=True)
class SystemSpec:
    n: int
    m: int
    f1: tuple
    f2: tuple
    D: DisturbanceSet
    safe: SafeSet
    init: InitialSet
    T: float
    clamp_box: Optional[Box] = None

    def __post_init__(self):
        f1 = tuple(self.f1)
        f2 = tuple(tuple(row) for row in self.f2)
        if self.n < 1 or self.m < 1:
            raise InputError("state and disturbance dimensions must be positive")
        if len(f1) != self.n or len(f2) != self.n or any(len(row) != self.m for row in f2):
            raise InputError(f"f1 must have {self.n} entries and f2 must be {self.n}x{self.m}")
        for p in f1 + tuple(q for row in f2 for q in row) + (self.safe.h,):
            if p.nvars != self.n:
                raise InputError("dynamics and h must be polynomials in x1..xn")
        if self.D.m != self.m:
            raise InputError(f"disturbance set has dimension {self.D.m}, expected {self.m}")
        if self.safe.enclosing.dim != self.n or self.init.box.dim != self.n:
            raise InputError("safe/initial boxes must have dimension n")
        if self.init.g is not None and self.init.g.nvars != self.n:
            raise InputError("g must be a polynomial in x1..xn")
        if not (np.isfinite(self.T) and self.T > 0):
            raise InputError("horizon T must be finite and positive")
        object.__setattr__(self, "f1", f1)
        object.__setattr__(self, "f2", f2)
        object.__setattr__(self, "T", float(self.T))
        if self.clamp_box is None:
            object.__setattr__(self, "clamp_box", safe_bounding_box(self.safe).scaled(1.1))
        elif self.clamp_box.dim != self.n:
            raise InputError("clamp box must have dimension n")

    # compiled evaluators (not part of equality) ----------------------------

    @property
    def _f1v(self) -> PolyVector:
        cache = self.__dict__.setdefault("_cache", {})
        if "f1" not in cache:
            cache["f1"] = PolyVector(self.f1)
            cache["f2"] = PolyVector([q for row in self.f2 for q in row])
        return cache["f1"]

    @property
    def _f2v(self) -> PolyVector:
        self._f1v
        return self.__dict__["_cache"]["f2"]

    def drift(self, X) -> np.ndarray:
        """``f1`` at a batch of points, shape ``(N, n)`` (no clamping)."""
        return self._f1v(X)

    def input_matrix(self, X) -> np.ndarray:
        """``f2`` at a batch of points, shape ``(N, n, m)`` (no clamping)."""
        X = np.atleast_2d(X)
        return self._f2v(X).reshape(X.shape[0], self.n, self.m)

    def field(self, X, Dv) -> np.ndarray:
        """``f(x, d)`` for matching batches of states and disturbances."""
        X = np.atleast_2d(np.asarray(X, float))
        Dv = np.broadcast_to(np.atleast_2d(np.asarray(Dv, float)), (X.shape[0], self.m))
        return self.drift(X) + np.einsum("nij,nj->ni", self.input_matrix(X), Dv)

    def extended_field(self, X, Dv) -> np.ndarray:
        """``F(x, d) = f(clamp(x), d)``."""
        X = np.atleast_2d(np.asarray(X, float))
        return self.field(self.clamp_box.clamp(X), Dv)

    def hamiltonian(self, X, P) -> np.ndarray:
        """``sup_{d in D} p . F(x, d)`` for batches of states and costates."""
        Xc = self.clamp_box.clamp(np.atleast_2d(np.asarray(X, float)))
        P = np.atleast_2d(np.asarray(P, float))
        b = np.einsum("ni,nij->nj", P, self.input_matrix(Xc))
        return np.einsum("ni,ni->n", P, self.drift(Xc)) + self.D.support(b)

    # validation ------------------------------------------------------------

    def validate(self, max_boxes: int = 200_000) -> None:
        """Check the set-level invariants; raise :class:`ConfigurationError` on failure."""
        check_safe_bounded(self.safe, max_boxes)
        bbox = safe_bounding_box(self.safe)
        if not self.clamp_box.contains_box(bbox):
            raise ConfigurationError("clamp box must contain the bounding box of the closed safe set")
        inner = np.all(self.clamp_box.lo < bbox.lo) and np.all(self.clamp_box.hi > bbox.hi)
        if not inner:
            raise ConfigurationError("clamp box must strictly enclose the safe set (positive margin)")
        check_initial_inside(self, max_boxes)


# ---------------------------------------------------------------------------
# operations


def _check_dims(spec: SystemSpec, x, d):
    x = np.asarray(x, float)
    d = np.asarray(d, float)
    if x.shape != (spec.n,):
        raise InputError(f"state must have length {spec.n}, got shape {x.shape}")
    if d.shape != (spec.m,):
        raise InputError(f"disturbance must have length {spec.m}, got shape {d.shape}")
    return x, d


def eval_field(spec: SystemSpec, x, d) -> np.ndarray:
    x, d = _check_dims(spec, x, d)
    if not spec.D.contains(d):
        raise DomainError(f"disturbance {d.tolist()} is not in D")
    return spec.field(x, d)[0]


def extend_field(spec: SystemSpec, x, d) -> np.ndarray:
    x, d = _check_dims(spec, x, d)
    if not spec.D.contains(d):
        raise DomainError(f"disturbance {d.tolist()} is not in D")
    return spec.extended_field(x, d)[0]


def hamiltonian_sup(spec: SystemSpec, x, p) -> float:
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    if x.shape != (spec.n,) or p.shape != (spec.n,):
        raise InputError(f"state and costate must have length {spec.n}")
    return float(spec.hamiltonian(x, p)[0])


def _grad_abs_max(poly: PolyExpr, lo, hi) -> np.ndarray:
    out = []
    for g in poly.gradient():
        glo, ghi = g.bounds(lo, hi)
        out.append(np.maximum(np.abs(glo), np.abs(ghi)).max())
    return np.array(out)


def lipschitz_bound(poly: PolyExpr, box: Box, cells: int = 1) -> float:
    """Upper bound on ``max |grad poly|`` over ``box``.

    Each partial derivative is bounded by interval evaluation (optionally on
    a ``cells``-per-axis subdivision); the Euclidean norm of the per-partial
    bounds dominates the gradient norm everywhere on the box.
    """
    lo, hi = _cells(box, cells)
    return float(np.linalg.norm(_grad_abs_max(poly, lo, hi)))


def _cells(box: Box, cells: int):
    edges = [np.linspace(a, b, cells + 1) for a, b in zip(box.lower, box.upper)]
    lows = np.array(list(itertools.product(*[e[:-1] for e in edges])))
    highs = np.array(list(itertools.product(*[e[1:] for e in edges])))
    return lows, highs


def _field_component_bounds(spec: SystemSpec, polys_1, polys_2, lo, hi):
    """Interval of ``p1 + sum_j p2[j] d_j`` over x-boxes and the D bounding box."""
    dbox = spec.D.bounding_box()
    tlo, thi = polys_1.bounds(lo, hi)
    for j, q in enumerate(polys_2):
        qlo, qhi = q.bounds(lo, hi)
        plo, phi = mul_bounds(qlo, qhi, dbox.lower[j], dbox.upper[j])
        tlo, thi = tlo + plo, thi + phi
    return tlo, thi


def field_speed_bounds(spec: SystemSpec, cells: int | None = None) -> np.ndarray:
    """Per-axis upper bound of ``|F_i(x, d)|`` over all x and d in D.

    Because of the clamp, the range over all of R^n equals the range over the
    clamp box, which is subdivided into cells to tighten the enclosure.
    """
    if cells is None:
        cells = {1: 64, 2: 24, 3: 10}.get(spec.n, 6)
    lo, hi = _cells(spec.clamp_box, cells)
    out = []
    for i in range(spec.n):
        tlo, thi = _field_component_bounds(spec, spec.f1[i], spec.f2[i], lo, hi)
        out.append(max(np.abs(tlo).max(), np.abs(thi).max()))
    return np.array(out)


def field_lipschitz_bound(spec: SystemSpec, cells: int = 4) -> float:
    """Lipschitz constant of the extended field in x, uniform over D.

    Bounds every Jacobian entry by interval arithmetic over the clamp box and
    the D bounding box and returns the Frobenius norm of those bounds.  The
    clamp is non-expansive, so the bound holds on all of R^n.
    """
    lo, hi = _cells(spec.clamp_box, cells)
    total = 0.0
    for i in range(spec.n):
        for j in range(spec.n):
            tlo, thi = _field_component_bounds(
                spec, spec.f1[i].diff(j), [q.diff(j) for q in spec.f2[i]], lo, hi)
            total += max(np.abs(tlo).max(), np.abs(thi).max()) ** 2
    return float(np.sqrt(total))


def growth_constant(spec: SystemSpec) -> float:
    """A constant ``C`` with ``|F(x, d)| <= C (1 + |x|)`` for all x and d in D."""
    speed = float(np.linalg.norm(field_speed_bounds(spec)))
    return max(field_lipschitz_bound(spec), speed)


# ---------------------------------------------------------------------------
# set-level checks


def _sublevel_classifier(poly: PolyExpr, strict: bool, region: PolyExpr | None = None):
    """Prove ``poly > 0`` (or ``>= 0``) on boxes, optionally only where ``region <= 0``."""

    def classify(lo, hi):
        plo, _ = poly.bounds(lo, hi)
        done = plo > 0 if strict else plo >= 0
        if region is not None:
            rlo, _ = region.bounds(lo, hi)
            done |= rlo > 0
        mid = 0.5 * (lo + hi)
        val = poly(mid)
        bad = val <= 0 if strict else val < 0
        if region is not None:
            bad &= region(mid) <= 0
        bad &= ~done
        if bad.any():
            i = int(np.argmax(bad))
            return Classification(done, witness=mid[i], witness_value=float(val[i]))
        return Classification(done)

    return classify


def check_safe_bounded(safe: SafeSet, max_boxes: int = 200_000) -> None:
    """Require ``h > 0`` on every face of the declared enclosing box."""
    box = safe.enclosing
    for axis in range(box.dim):
        for side in (box.lower[axis], box.upper[axis]):
            lo = box.lo.copy()
            hi = box.hi.copy()
            lo[axis] = hi[axis] = side
            res = branch_and_bound(lo, hi, _sublevel_classifier(safe.h, strict=True), max_boxes,
                                   scale=np.maximum(box.widths, 1e-12))
            if res.status == "refuted":
                raise ConfigurationError(
                    f"S not bounded by the declared box: h({res.witness.tolist()}) = "
                    f"{res.witness_value:.6g} <= 0 on its boundary")
            if res.status != "proved":
                raise ConfigurationError("could not verify that S is bounded (h > 0 on box faces)")


def check_initial_inside(spec: SystemSpec, max_boxes: int = 200_000) -> None:
    """Require ``h < 0`` on X0, proved by interval bisection."""
    box = spec.init.box
    if not spec.safe.enclosing.contains_box(box):
        raise ConfigurationError("X0 not contained in S (outside the enclosing box)")
    res = branch_and_bound(box.lo, box.hi, _sublevel_classifier(-spec.safe.h, True, spec.init.g),
                           max_boxes, scale=np.maximum(box.widths, 1e-12))
    if res.status == "refuted":
        raise ConfigurationError(
            f"X0 not contained in S: h({res.witness.tolist()}) = {0.0 - res.witness_value:.6g} >= 0")
    if res.status != "proved":
        raise ConfigurationError("could not verify that X0 is contained in S")


def safe_bounding_box(safe: SafeSet, resolution: int | None = None) -> Box:
    """Outer bounding box of the closed safe set, from interval subdivision.

    Cells are refined until they are about ``1/resolution`` of the enclosing
    box wide; every cell on which ``h`` may be non-positive contributes to
    the box, so the result contains every point of the enclosing box with
    ``h <= 0``.
    """
    box = safe.enclosing
    if resolution is None:
        resolution = {1: 4096, 2: 512}.get(box.dim, 96)
    cache = safe.__dict__.setdefault("_bbox_cache", {})
    if resolution in cache:
        return cache[resolution]
    scale = np.maximum(box.widths, 1e-12)
    min_w = scale / resolution
    lo, hi = box.lo[None, :], box.hi[None, :]
    known_lo = np.full(box.dim, np.inf)
    known_hi = np.full(box.dim, -np.inf)
    while lo.shape[0]:
        hlo, hhi = safe.h.bounds(lo, hi)
        maybe = hlo <= 0
        lo, hi, hhi = lo[maybe], hi[maybe], hhi[maybe]
        settled = (hhi < 0) | np.all(hi - lo <= min_w * (1 + 1e-9), axis=1)
        if settled.any():
            known_lo = np.minimum(known_lo, lo[settled].min(axis=0))
            known_hi = np.maximum(known_hi, hi[settled].max(axis=0))
        lo, hi = lo[~settled], hi[~settled]
        inside = np.all(lo >= known_lo, axis=1) & np.all(hi <= known_hi, axis=1)
        lo, hi = lo[~inside], hi[~inside]
        if lo.shape[0]:
            lo, hi = split_boxes(lo, hi, scale)
    if not np.all(np.isfinite(known_lo)):
        raise ConfigurationError("safe set is empty inside the enclosing box")
    out = Box(tuple(known_lo), tuple(known_hi))
    cache[resolution] = out
    return out
