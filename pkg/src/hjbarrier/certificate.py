"""Barrier certificate candidates and their interval branch-and-bound checker.

A certificate is a polynomial ``v(x, t)`` over ``x1..xn, t`` plus a mode:

* ``eq3``  time-independent: ``v < 0`` on X0, ``v >= 0`` on the boundary of S,
  ``grad v . f <= 0`` on the closed safe set for every d;
* ``eq5``  time-dependent: ``v(., 0) < 0`` on X0, ``v >= 0`` on the boundary
  for all t in [0, T], ``Lv <= 0`` on the closed safe set;
* ``eq7``  as eq5 but with ``h - v <= 0`` on the whole closed safe set in
  place of the boundary condition;
* ``eq8``  as eq5 with ``Lv <= lambda * v``.

``Lv = dv/dt + grad_x v . (f1 + f2 d)`` is affine in d, so its supremum over a
box is attained at a vertex and over a ball equals ``a + r |b|``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .dynamics import Box, SystemSpec, safe_bounding_box
from .errors import ConfigurationError, InputError
from .intervals import Classification, branch_and_bound, poly_bounds
from .poly import PolyExpr

DEFAULT_TOL = 1e-6
DEFAULT_MAX_BOXES = 1_000_000
MAX_VERTEX_DIM = 8
FORMAT = "hjbarrier-certificate/1"


class Mode(str, Enum):
    EQ3_STATIC = "eq3"
    EQ5 = "eq5"
    EQ7 = "eq7"
    EQ8 = "eq8"


@dataclass(frozen=True)
class Certificate:
    v: PolyExpr
    lam: float = 0.0
    mode: Mode = Mode.EQ5

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "lam", float(self.lam))
        if self.v.nvars < 2:
            raise InputError("certificate must be a polynomial in x1..xn and t")
        if self.mode is Mode.EQ3_STATIC and self.v.depends_on(self.v.nvars - 1):
            raise InputError("eq3 certificates must not depend on t")
        if self.lam != 0.0 and self.mode is not Mode.EQ8:
            raise InputError("lambda is only allowed in mode eq8")

    @property
    def n(self) -> int:
        return self.v.nvars - 1


@dataclass
class Counterexample:
    condition: str
    x: list
    t: float
    d: Optional[list]
    value: float


@dataclass
class ConditionResult:
    status: str  # VALID | INVALID | INCONCLUSIVE
    boxes: int
    counterexample: Optional[Counterexample] = None
    worst_point: Optional[list] = None
    worst_value: Optional[float] = None


@dataclass
class CheckReport:
    status: str
    conditions: dict
    counterexample: Optional[Counterexample] = None
    boxes_processed: int = 0

    @property
    def counterexamples(self) -> list:
        return [c.counterexample for c in self.conditions.values() if c.counterexample is not None]


# ---------------------------------------------------------------------------
# Lie derivative


def lie_parts(spec: SystemSpec, v: PolyExpr):
    """``Lv = a + sum_j b_j d_j`` with ``a = dv/dt + grad v . f1`` and ``b_j = grad v . f2[:, j]``."""
    k = spec.n + 1
    if v.nvars != k:
        raise InputError(f"certificate must have {k} variables (x1..x{spec.n}, t)")
    grads = [v.diff(i) for i in range(spec.n)]
    a = v.diff(spec.n)
    for i in range(spec.n):
        a = a + grads[i] * spec.f1[i].extend(k)
    bs = []
    for j in range(spec.m):
        b = PolyExpr.zero(k)
        for i in range(spec.n):
            b = b + grads[i] * spec.f2[i][j].extend(k)
        bs.append(b)
    return a, bs


def box_vertices(spec: SystemSpec) -> np.ndarray:
    if spec.D.kind != "box":
        raise InputError("vertex enumeration needs a box disturbance set")
    if spec.m > MAX_VERTEX_DIM:
        raise ConfigurationError(
            f"vertex enumeration over 2^{spec.m} vertices refused (m > {MAX_VERTEX_DIM})")
    return spec.D.vertices()


def lie_derivative(spec: SystemSpec, v: PolyExpr, d=None):
    """``Lv`` for a fixed disturbance ``d``, or ``[(vertex, Lv)]`` over all box vertices."""
    a, bs = lie_parts(spec, v)
    if d is not None:
        d = np.asarray(d, float)
        if d.shape != (spec.m,):
            raise InputError(f"disturbance must have length {spec.m}")
        out = a
        for j, b in enumerate(bs):
            out = out + b * float(d[j])
        return out
    return [(vert, lie_derivative(spec, v, vert)) for vert in box_vertices(spec)]


def interval_bound(poly: PolyExpr, box: Box) -> tuple:
    """Enclosure of ``poly`` over ``box`` by naive interval evaluation of its monomials."""
    lo, hi = poly.bounds(box.lo[None, :], box.hi[None, :])
    return float(lo[0]), float(hi[0])


# ---------------------------------------------------------------------------
# branch and bound


def _aligned(p: PolyExpr, q: PolyExpr):
    """Exponent matrix of the union of monomials and both coefficient vectors on it."""
    index = {}
    for e, _ in p.terms + q.terms:
        index.setdefault(e, len(index))
    E = np.array(list(index), dtype=np.int64).reshape(-1, p.nvars)
    cp = np.zeros(len(index))
    cq = np.zeros(len(index))
    for e, c in p.terms:
        cp[index[e]] = c
    for e, c in q.terms:
        cq[index[e]] = c
    return E, cp, cq


def _grad_at(polys, pts):
    return np.stack([g(pts) for g in polys], axis=1)


@dataclass
class _Condition:
    """``target (+ radius * sqrt(norm_sq)) <= bound`` on ``domain`` restricted to a region.

    ``region_kind`` is ``"none"``, ``"sublevel"`` (``region <= 0``) or
    ``"level"`` (``region == 0``).  On a region the check may subtract a
    multiple of ``region`` (non-negative for sublevel sets, any sign on level
    sets), which leaves the condition unchanged where it matters.
    """

    name: str
    target: PolyExpr
    bound: float
    tol: float
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    region: Optional[PolyExpr] = None
    region_kind: str = "none"
    d: Optional[np.ndarray] = None
    norm_sq: Optional[PolyExpr] = None
    b_polys: Optional[list] = None
    ball: Optional[tuple] = None  # (center, radius)
    n: int = 0

    def __post_init__(self):
        k = self.target.nvars
        self.grad_target = self.target.gradient()
        if self.region is not None:
            self.grad_region = self.region.gradient()
            self.E, self.c_target, self.c_region = _aligned(self.target, self.region)

    def extra_hi(self, lo, hi):
        if self.norm_sq is None:
            return 0.0
        _, qhi = self.norm_sq.bounds(lo, hi)
        return self.ball[1] * np.sqrt(np.maximum(qhi, 0.0))

    def extra_at(self, pts):
        if self.norm_sq is None:
            return 0.0
        return self.ball[1] * np.sqrt(np.maximum(self.norm_sq(pts), 0.0))

    def multiplier(self, pts):
        gp = _grad_at(self.grad_target, pts)
        gr = _grad_at(self.grad_region, pts)
        den = np.einsum("ij,ij->i", gr, gr)
        mu = np.where(den > 0, np.einsum("ij,ij->i", gp, gr) / np.where(den > 0, den, 1.0), 0.0)
        if self.region_kind == "sublevel":
            mu = np.maximum(mu, 0.0)
        return mu

    def project(self, pts):
        """Newton steps in x onto ``region == 0``; returns points and an accept mask."""
        x = pts.copy()
        for _ in range(30):
            g = self.region(x)
            gr = _grad_at(self.grad_region, x)
            gr[:, self.n:] = 0.0
            den = np.einsum("ij,ij->i", gr, gr)
            step = np.where(den > 0, g / np.where(den > 0, den, 1.0), 0.0)
            x = x - step[:, None] * gr
        ok = np.abs(self.region(x)) <= 1e-12 * (1.0 + np.abs(x[:, :self.n]).max(axis=1) ** 2)
        inside = np.all((x >= self.domain_lo - 1e-12) & (x <= self.domain_hi + 1e-12), axis=1)
        return x, ok & inside

    def classify(self, lo, hi):
        B = lo.shape[0]
        irrelevant = np.zeros(B, bool)
        if self.region is not None:
            rlo, rhi = self.region.bounds(lo, hi)
            irrelevant = rlo > 0
            if self.region_kind == "level":
                irrelevant |= rhi < 0
        _, phi = self.target.bounds(lo, hi)
        extra = self.extra_hi(lo, hi)
        ok = phi + extra <= self.bound
        if self.region is not None:
            todo = ~ok & ~irrelevant
            if todo.any():
                mid = 0.5 * (lo[todo] + hi[todo])
                mu = self.multiplier(mid)
                coeffs = self.c_target[None, :] - mu[:, None] * self.c_region[None, :]
                _, h2 = poly_bounds(coeffs, self.E, lo[todo], hi[todo])
                ex = extra[todo] if np.ndim(extra) else extra
                ok[np.nonzero(todo)[0]] |= h2 + ex <= self.bound
        done = ok | irrelevant
        undecided = np.nonzero(~done)[0]
        if undecided.size == 0:
            return Classification(done)
        pts = 0.5 * (lo[undecided] + hi[undecided])
        valid = np.ones(undecided.size, bool)
        if self.region_kind == "level":
            pts, valid = self.project(pts)
        elif self.region_kind == "sublevel":
            valid = self.region(pts) <= 0
        val = self.target(pts) + self.extra_at(pts)
        score = np.full(B, -np.inf)
        probe = np.zeros_like(lo)
        score[undecided] = np.where(valid, val, -np.inf)
        probe[undecided] = pts
        bad = valid & (val > self.tol)
        if bad.any():
            i = int(np.argmax(np.where(bad, val, -np.inf)))
            return Classification(done, witness=pts[i], witness_value=float(val[i]),
                                  score=score, probe=probe)
        return Classification(done, score=score, probe=probe)

    def disturbance_at(self, pt):
        if self.ball is None:
            return None if self.d is None else self.d.tolist()
        center, radius = self.ball
        b = np.array([p(pt[None, :])[0] for p in self.b_polys])
        nb = np.linalg.norm(b)
        return (center + (radius * b / nb if nb > 0 else 0.0)).tolist()

    def run(self, max_boxes: int) -> ConditionResult:
        scale = np.where(self.domain_hi - self.domain_lo > 0, self.domain_hi - self.domain_lo, 1e-300)
        res = branch_and_bound(self.domain_lo, self.domain_hi, self.classify, max_boxes, scale=scale)
        worst = None if res.worst_point is None else res.worst_point.tolist()
        wval = None if not np.isfinite(res.worst_score) else res.worst_score
        if res.status == "refuted":
            pt = res.witness
            ce = Counterexample(self.name, pt[:self.n].tolist(), float(pt[self.n]),
                                self.disturbance_at(pt), float(res.witness_value))
            return ConditionResult("INVALID", res.processed, ce, worst, wval)
        status = "VALID" if res.status == "proved" else "INCONCLUSIVE"
        return ConditionResult(status, res.processed, None, worst, wval)


def _conditions(spec: SystemSpec, cert: Certificate, tol: float) -> list:
    if cert.n != spec.n:
        raise InputError(f"certificate is over {cert.n} states, system has {spec.n}")
    n, k = spec.n, spec.n + 1
    v = cert.v
    h = spec.safe.h.extend(k)
    T_hi = 0.0 if cert.mode is Mode.EQ3_STATIC else spec.T
    sb = safe_bounding_box(spec.safe)
    s_lo = np.append(sb.lo, 0.0)
    s_hi = np.append(sb.hi, T_hi)
    x0 = spec.init.box
    i_lo = np.append(x0.lo, 0.0)
    i_hi = np.append(x0.hi, 0.0)
    g = spec.init.g.extend(k) if spec.init.g is not None else None

    conds = [_Condition("initial", v.substitute(n, 0.0), -tol, tol, i_lo, i_hi,
                        g, "sublevel" if g is not None else "none", n=n)]
    if cert.mode is Mode.EQ7:
        conds.append(_Condition("obstacle", h - v, 0.0, tol, s_lo, s_hi, h, "sublevel", n=n))
    else:
        conds.append(_Condition("boundary", -v, 0.0, tol, s_lo, s_hi, h, "level", n=n))
    a, bs = lie_parts(spec, v)
    if cert.mode is Mode.EQ8:
        a = a - v * cert.lam
    if spec.D.kind == "box":
        for vert in box_vertices(spec):
            target = a
            for j, b in enumerate(bs):
                target = target + b * float(vert[j])
            conds.append(_Condition("lie", target, 0.0, tol, s_lo, s_hi, h, "sublevel", d=vert, n=n))
    else:
        c = spec.D.c
        a_c = a
        for j, b in enumerate(bs):
            a_c = a_c + b * float(c[j])
        norm_sq = PolyExpr.zero(k)
        for b in bs:
            norm_sq = norm_sq + b * b
        conds.append(_Condition("lie", a_c, 0.0, tol, s_lo, s_hi, h, "sublevel", norm_sq=norm_sq,
                                b_polys=bs, ball=(c, spec.D.radius[0]), n=n))
    return conds


def check_certificate(spec: SystemSpec, cert: Certificate, tol: float = DEFAULT_TOL,
                      max_boxes: int = DEFAULT_MAX_BOXES) -> CheckReport:
    """Verify every condition of the certificate's mode by interval branch and bound.

    Each condition gets its own budget of ``max_boxes``.  The report is VALID
    only if every condition is proved, INVALID if some condition has a point
    counterexample violating it by more than ``tol``, and INCONCLUSIVE
    otherwise.
    """
    if not isinstance(cert, Certificate):
        raise InputError("expected a Certificate")
    results = {}
    total = 0
    for cond in _conditions(spec, cert, tol):
        r = cond.run(max_boxes)
        total += r.boxes
        if cond.name in results:
            prev = results[cond.name]
            results[cond.name] = _merge(prev, r)
        else:
            results[cond.name] = r
    statuses = [r.status for r in results.values()]
    if "INVALID" in statuses:
        status = "INVALID"
    elif all(s == "VALID" for s in statuses):
        status = "VALID"
    else:
        status = "INCONCLUSIVE"
    first = next((r.counterexample for r in results.values() if r.counterexample is not None), None)
    return CheckReport(status, results, first, total)


def _merge(a: ConditionResult, b: ConditionResult) -> ConditionResult:
    rank = {"INVALID": 2, "INCONCLUSIVE": 1, "VALID": 0}
    main = a if rank[a.status] >= rank[b.status] else b
    worst, wval = a.worst_point, a.worst_value
    if b.worst_value is not None and (wval is None or b.worst_value > wval):
        worst, wval = b.worst_point, b.worst_value
    return ConditionResult(main.status, a.boxes + b.boxes, main.counterexample, worst, wval)


def condition_value(spec: SystemSpec, cert: Certificate, ce: Counterexample) -> float:
    """Re-evaluate the violated quantity at a counterexample, from scratch."""
    x = np.asarray(ce.x, float)
    pt = np.append(x, ce.t)
    if ce.condition == "initial":
        return float(cert.v(np.append(x, 0.0)))
    if ce.condition == "boundary":
        return float(-cert.v(pt))
    if ce.condition == "obstacle":
        return float(spec.safe.h(x) - cert.v(pt))
    if ce.condition == "lie":
        lv = lie_derivative(spec, cert.v, ce.d)
        return float(lv(pt) - cert.lam * cert.v(pt))
    raise InputError(f"unknown condition {ce.condition!r}")


# ---------------------------------------------------------------------------
# lambda transform


class LambdaTransform:
    """``v'(x, t) = exp(-lambda t) v(x, t)`` and ``Lv' = exp(-lambda t) (Lv - lambda v)``."""

    def __init__(self, cert: Certificate):
        if cert.mode is not Mode.EQ8 and cert.lam != 0.0:
            raise InputError("lambda transform needs an eq8 certificate")
        self.cert = cert
        self.lam = cert.lam

    def value(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        return np.exp(-self.lam * pts[:, -1]) * self.cert.v(pts)

    def lie(self, spec: SystemSpec, pts, Dv) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        Dv = np.broadcast_to(np.atleast_2d(np.asarray(Dv, float)), (pts.shape[0], spec.m))
        a, bs = lie_parts(spec, self.cert.v)
        lv = a(pts) + sum(b(pts) * Dv[:, j] for j, b in enumerate(bs))
        return np.exp(-self.lam * pts[:, -1]) * (lv - self.lam * self.cert.v(pts))


def transform_lambda(cert: Certificate) -> LambdaTransform:
    return LambdaTransform(cert)


# ---------------------------------------------------------------------------
# serialization


def certificate_to_dict(cert: Certificate, provenance: dict | None = None) -> dict:
    n = cert.n
    doc = {
        "format": FORMAT,
        "n": n,
        "mode": cert.mode.value,
        "lambda": cert.lam,
        "monomials": [{"coeff": c, "x": list(e[:n]), "t": e[n]} for e, c in cert.v.terms],
    }
    if provenance is not None:
        doc["provenance"] = provenance
    return doc


def certificate_from_dict(doc: dict) -> Certificate:
    try:
        if doc.get("format") != FORMAT:
            raise InputError(f"unsupported certificate format {doc.get('format')!r}")
        n = int(doc["n"])
        terms = []
        for mono in doc["monomials"]:
            xs = [int(e) for e in mono["x"]]
            if len(xs) != n:
                raise InputError("monomial x-exponents have the wrong length")
            terms.append((tuple(xs) + (int(mono["t"]),), float(mono["coeff"])))
        return Certificate(PolyExpr(n + 1, tuple(terms)), float(doc["lambda"]), Mode(doc["mode"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed certificate: {exc}") from exc


def dumps(cert: Certificate, provenance: dict | None = None) -> str:
    return json.dumps(certificate_to_dict(cert, provenance), indent=2, sort_keys=True)


def loads(text: str) -> Certificate:
    return certificate_from_dict(json.loads(text))
