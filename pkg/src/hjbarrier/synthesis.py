"""Certificate synthesis: CEGIS over polynomial templates, and fitting to a value grid.

Both routes hand every candidate to :func:`check_certificate`; nothing is
returned that the checker has not reported VALID.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .certificate import (DEFAULT_MAX_BOXES, DEFAULT_TOL, Certificate, Mode, box_vertices,
                          check_certificate, lie_parts)
from .dynamics import SystemSpec, safe_bounding_box
from .errors import InputError
from .poly import PolyExpr, monomial_values

COEFF_BOUND = 1e3
SAMPLES_PER_CONDITION = 200
RELATIVE_MARGIN = 1e-4
JITTER = 8


@dataclass(frozen=True)
class Template:
    """Monomials ``x^a t^b`` with ``|a| <= deg_x`` and ``b <= deg_t``."""

    n: int
    deg_x: int
    deg_t: int

    def __post_init__(self):
        if self.n < 1 or self.deg_x < 0 or self.deg_t < 0:
            raise InputError("template needs n >= 1 and non-negative degrees")

    @property
    def exponents(self) -> list:
        out = []
        for a in itertools.product(range(self.deg_x + 1), repeat=self.n):
            if sum(a) <= self.deg_x:
                for b in range(self.deg_t + 1):
                    out.append(tuple(a) + (b,))
        return sorted(out, key=lambda e: (sum(e), e))

    @property
    def size(self) -> int:
        return len(self.exponents)

    def basis(self) -> list:
        k = self.n + 1
        return [PolyExpr(k, ((e, 1.0),)) for e in self.exponents]

    def polynomial(self, coeffs) -> PolyExpr:
        coeffs = np.asarray(coeffs, float)
        if coeffs.shape != (self.size,):
            raise InputError(f"template has {self.size} coefficients, got {coeffs.shape}")
        return PolyExpr(self.n + 1, tuple(zip(self.exponents, coeffs.tolist())))


@dataclass
class LinearFeasibilityProblem:
    """Rows ``A c <= b``; ``slack_cap`` bounds the maximized common slack."""

    A: np.ndarray
    b: np.ndarray
    kinds: list = field(default_factory=list)
    bound: float = COEFF_BOUND
    slack_cap: Optional[float] = None

    @property
    def rows(self) -> int:
        return self.A.shape[0]


@dataclass
class FeasibilityResult:
    coeffs: Optional[np.ndarray]
    slack: float
    message: str


@dataclass
class SamplePoints:
    """Sample sets per condition: ``initial`` (x), ``boundary``/``region``/``lie`` (x, t) and ``lie_d``."""

    initial: np.ndarray
    boundary: np.ndarray
    region: np.ndarray
    lie: np.ndarray
    lie_d: np.ndarray

    @property
    def total(self) -> int:
        return sum(a.shape[0] for a in (self.initial, self.boundary, self.region, self.lie))


@dataclass
class SynthesisResult:
    certificate: Optional[Certificate]
    provenance: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def found(self) -> bool:
        return self.certificate is not None


# ---------------------------------------------------------------------------
# linear feasibility


def build_constraints(spec: SystemSpec, tmpl: Template, points: SamplePoints, margin: float,
                      mode: Mode = Mode.EQ5, lam: float = 0.0) -> LinearFeasibilityProblem:
    """One row per sample: ``v(x,0) <= -margin``, ``-v <= 0`` (or ``h - v <= -margin``), ``Lv - lam v <= -margin``."""
    mode = Mode(mode)
    if tmpl.n != spec.n:
        raise InputError("template dimension does not match the system")
    if points.initial.shape[0] == 0 or points.lie.shape[0] == 0:
        raise InputError("empty sample set")
    if mode is Mode.EQ7 and points.region.shape[0] == 0:
        raise InputError("empty sample set")
    if mode in (Mode.EQ5, Mode.EQ8) and points.boundary.shape[0] == 0:
        raise InputError("empty sample set")
    E = np.array(tmpl.exponents, dtype=np.int64)
    rows, rhs, kinds = [], [], []

    X0 = np.hstack([points.initial, np.zeros((points.initial.shape[0], 1))])
    rows.append(monomial_values(E, X0))
    rhs.append(np.full(X0.shape[0], -margin))
    kinds += ["initial"] * X0.shape[0]

    if mode is Mode.EQ7:
        P = points.region
        rows.append(-monomial_values(E, P))
        rhs.append(-margin - spec.safe.h(P[:, :spec.n]))
        kinds += ["obstacle"] * P.shape[0]
    else:
        P = points.boundary
        rows.append(-monomial_values(E, P))
        rhs.append(np.zeros(P.shape[0]))
        kinds += ["boundary"] * P.shape[0]

    rows.append(lie_matrix(spec, tmpl, points.lie, points.lie_d, lam))
    rhs.append(np.full(points.lie.shape[0], -margin))
    kinds += ["lie"] * points.lie.shape[0]
    return LinearFeasibilityProblem(np.vstack(rows), np.concatenate(rhs), kinds)


def lie_matrix(spec: SystemSpec, tmpl: Template, pts: np.ndarray, dists: np.ndarray,
               lam: float = 0.0) -> np.ndarray:
    """Entry ``(i, j)`` is ``(L - lam) m_j`` at ``(pts[i], dists[i])``."""
    n = spec.n
    E = np.array(tmpl.exponents, dtype=np.int64)
    M = monomial_values(E, pts)
    out = np.zeros_like(M)
    # d/dt m_j
    for j, e in enumerate(E):
        if e[n] > 0:
            ed = e.copy()
            ed[n] -= 1
            out[:, j] += e[n] * monomial_values(ed[None, :], pts)[:, 0]
    X = pts[:, :n]
    F = spec.field(X, dists)
    for i in range(n):
        for j, e in enumerate(E):
            if e[i] > 0:
                ed = e.copy()
                ed[i] -= 1
                out[:, j] += e[i] * monomial_values(ed[None, :], pts)[:, 0] * F[:, i]
    return out - lam * M


def solve_feasibility(lfp: LinearFeasibilityProblem) -> FeasibilityResult:
    """Maximize the common slack ``s`` in ``A c + s <= b`` with ``|c| <= B``."""
    if lfp.rows == 0 or not (np.all(np.isfinite(lfp.A)) and np.all(np.isfinite(lfp.b))):
        return FeasibilityResult(None, -np.inf, "empty or non-finite constraint rows")
    p = lfp.A.shape[1]
    cost = np.zeros(p + 1)
    cost[-1] = -1.0
    A = np.hstack([lfp.A, np.ones((lfp.rows, 1))])
    bounds = [(-lfp.bound, lfp.bound)] * p + [(None, lfp.slack_cap)]
    res = linprog(cost, A_ub=A, b_ub=lfp.b, bounds=bounds, method="highs")
    if res.status != 0 or res.x is None:
        return FeasibilityResult(None, -np.inf, f"solver status {res.status}: {res.message}")
    slack = float(res.x[-1])
    if slack < 0:
        return FeasibilityResult(None, slack, "infeasible: best common slack is negative")
    return FeasibilityResult(res.x[:-1].copy(), slack, "feasible")


# ---------------------------------------------------------------------------
# sampling


def _halton(dim: int, count: int, lo, hi) -> np.ndarray:
    u = qmc.Halton(d=dim, scramble=False).random(count + 1)[1:]
    return np.asarray(lo) + u * (np.asarray(hi) - np.asarray(lo))


def project_to_level(poly: PolyExpr, pts: np.ndarray, n: int, steps: int = 40):
    """Newton steps in the first ``n`` coordinates onto ``poly == 0``; returns points and a mask."""
    x = pts.copy()
    grads = [poly.diff(i) for i in range(n)]
    for _ in range(steps):
        g = poly(x[:, :n])
        G = np.stack([q(x[:, :n]) for q in grads], axis=1)
        den = np.einsum("ij,ij->i", G, G)
        x[:, :n] -= (np.where(den > 0, g / np.where(den > 0, den, 1.0), 0.0))[:, None] * G
    ok = np.abs(poly(x[:, :n])) <= 1e-10
    return x, ok


def lie_disturbances(spec: SystemSpec) -> np.ndarray:
    """Disturbance values at which the Lie condition is sampled."""
    if spec.D.kind == "box":
        return box_vertices(spec)
    c, r, m = spec.D.c, spec.D.radius[0], spec.m
    dirs = [s * e for e in np.eye(m) for s in (1.0, -1.0)]
    if m > 1:
        dirs += [np.array(s) / np.sqrt(m) for s in itertools.product((1.0, -1.0), repeat=m)]
    return c + r * np.array(dirs)


def _with_disturbances(spec: SystemSpec, pts: np.ndarray):
    ds = lie_disturbances(spec)
    P = np.repeat(pts, ds.shape[0], axis=0)
    D = np.tile(ds, (pts.shape[0], 1))
    return P, D


def initial_samples(spec: SystemSpec, mode: Mode, count: int = SAMPLES_PER_CONDITION) -> SamplePoints:
    n, T = spec.n, spec.T
    box = spec.init.box
    X0 = _halton(n, 4 * count, box.lo, box.hi)
    if spec.init.g is not None:
        X0 = X0[spec.init.g(X0) <= 0]
    X0 = np.vstack([X0[:count], box.vertices()])
    if spec.init.g is not None:
        X0 = X0[spec.init.g(X0) <= 0]
    sb = safe_bounding_box(spec.safe)
    lo, hi = np.append(sb.lo, 0.0), np.append(sb.hi, T)
    cand = _halton(n + 1, 8 * count, lo, hi)
    inside = cand[spec.safe.h(cand[:, :n]) <= 0][:count]
    # boundary: Newton projection of region samples, plus the time end points
    proj, ok = project_to_level(spec.safe.h, _halton(n + 1, 2 * count, lo, hi), n)
    bnd = proj[ok][:count]
    bnd = np.vstack([bnd, np.column_stack([bnd[:, :n], np.full(bnd.shape[0], T)])[:: max(1, count // 20)]])
    reg = np.vstack([inside, np.column_stack([inside[:, :n], np.zeros(inside.shape[0])])[::10],
                     np.column_stack([inside[:, :n], np.full(inside.shape[0], T)])[::10], bnd])
    lie_pts, lie_d = _with_disturbances(spec, reg)
    empty = np.zeros((0, n + 1))
    return SamplePoints(X0, bnd if mode is not Mode.EQ7 else empty,
                        reg if mode is Mode.EQ7 else empty, lie_pts, lie_d)


def _jitter(spec: SystemSpec, pt: np.ndarray, scale: np.ndarray, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return pt[None, :] + (2 * rng.random((count, pt.size)) - 1) * scale[None, :]


def _add_point(spec: SystemSpec, pts: SamplePoints, condition: str, x, t, d, iteration: int,
               mode: Mode) -> SamplePoints:
    """Add a violating point and jittered neighbours to the sample set of ``condition``."""
    n, T = spec.n, spec.T
    sb = safe_bounding_box(spec.safe)
    x = np.asarray(x, float)
    width = np.append(sb.widths, T) * 1e-2
    if condition == "initial":
        near = _jitter(spec, x, width[:n], JITTER, iteration)
        near = np.clip(near, spec.init.box.lo, spec.init.box.hi)
        near = np.vstack([x[None, :], near])
        if spec.init.g is not None:
            near = near[spec.init.g(near) <= 0]
        return SamplePoints(np.vstack([pts.initial, near]), pts.boundary, pts.region, pts.lie, pts.lie_d)
    p = np.append(x, t)
    near = np.vstack([p[None, :], _jitter(spec, p, width, JITTER, iteration)])
    near[:, n] = np.clip(near[:, n], 0.0, T)
    if condition == "boundary":
        near, ok = project_to_level(spec.safe.h, near, n)
        near = np.vstack([p[None, :], near[ok][1:]])
        return SamplePoints(pts.initial, np.vstack([pts.boundary, near]), pts.region, pts.lie, pts.lie_d)
    near = near[spec.safe.h(near[:, :n]) <= 0]
    if condition == "obstacle":
        return SamplePoints(pts.initial, pts.boundary, np.vstack([pts.region, near]), pts.lie, pts.lie_d)
    P, D = _with_disturbances(spec, near)
    if d is not None:
        P = np.vstack([P, near])
        D = np.vstack([D, np.tile(np.asarray(d, float), (near.shape[0], 1))])
    return SamplePoints(pts.initial, pts.boundary, pts.region, np.vstack([pts.lie, P]),
                        np.vstack([pts.lie_d, D]))


def h_scale(spec: SystemSpec) -> float:
    """``max |h|`` over the closed safe set, estimated on a sample."""
    sb = safe_bounding_box(spec.safe)
    X = _halton(spec.n, 4096, sb.lo, sb.hi)
    hv = spec.safe.h(X)
    hv = hv[hv <= 0]
    return float(max(np.max(-hv), 1e-12)) if hv.size else 1.0


# ---------------------------------------------------------------------------
# CEGIS


def cegis_synthesize(spec: SystemSpec, tmpl: Template, mode=Mode.EQ5, margin: float | None = None,
                     max_iters: int = 30, lam: float = 0.0, tol: float = DEFAULT_TOL,
                     max_boxes: int = DEFAULT_MAX_BOXES) -> SynthesisResult:
    """Alternate sample-based linear feasibility with the interval checker."""
    mode = Mode(mode)
    if mode not in (Mode.EQ5, Mode.EQ7, Mode.EQ8):
        raise InputError("CEGIS supports modes eq5, eq7 and eq8")
    if mode is not Mode.EQ8:
        lam = 0.0
    scale = h_scale(spec)
    margin = RELATIVE_MARGIN * scale if margin is None else margin
    pts = initial_samples(spec, mode)
    history = []
    prov = {"route": "cegis", "mode": mode.value, "lambda": lam, "deg_x": tmpl.deg_x,
            "deg_t": tmpl.deg_t, "margin": margin}
    for it in range(1, max_iters + 1):
        lfp = build_constraints(spec, tmpl, pts, margin, mode, lam)
        lfp.slack_cap = scale
        sol = solve_feasibility(lfp)
        entry = {"iteration": it, "samples": pts.total, "slack": sol.slack}
        history.append(entry)
        if sol.coeffs is None:
            entry["outcome"] = sol.message
            prov.update(iterations=it, history=history)
            return SynthesisResult(None, prov, {"reason": sol.message})
        cert = Certificate(tmpl.polynomial(sol.coeffs), lam, mode)
        report = check_certificate(spec, cert, tol, max_boxes)
        entry["check"] = report.status
        if report.status == "VALID":
            prov.update(iterations=it, history=history, boxes=report.boxes_processed)
            return SynthesisResult(cert, prov)
        before = pts.total
        added = False
        for name, res in report.conditions.items():
            if res.counterexample is not None:
                ce = res.counterexample
                entry.setdefault("counterexamples", []).append(
                    {"condition": name, "x": ce.x, "t": ce.t, "value": ce.value})
                pts = _add_point(spec, pts, name, ce.x, ce.t, ce.d, it, mode)
                added = True
            elif res.status == "INCONCLUSIVE" and res.worst_point is not None:
                wp = np.asarray(res.worst_point)
                pts = _add_point(spec, pts, name, wp[:spec.n], float(wp[spec.n]), None, it, mode)
                added = True
        if not added or pts.total <= before:
            entry["outcome"] = "no new samples"
            prov.update(iterations=it, history=history)
            return SynthesisResult(None, prov, {"reason": "checker gave no new sample points"})
    prov.update(iterations=max_iters, history=history)
    return SynthesisResult(None, prov, {"reason": f"no valid certificate after {max_iters} iterations"})


# ---------------------------------------------------------------------------
# fit to the value function


def shift_certificate(w: PolyExpr, eps: float, T: float) -> PolyExpr:
    """``w - 2 eps t + 2 (T + 1) eps``."""
    k = w.nvars
    t = PolyExpr.variable(k, k - 1)
    return w - t * (2.0 * eps) + 2.0 * (T + 1.0) * eps


def _fit_nodes(spec: SystemSpec, vg, max_levels: int = 21, max_points: int = 20000):
    g = vg.grid
    K = g.K
    levels = np.unique(np.linspace(0, K, min(K + 1, max_levels)).round().astype(int))
    nodes = g.nodes()
    inside = spec.safe.h(nodes) <= 0
    idx = np.nonzero(inside)[0]
    stride = max(1, int(np.ceil(idx.size * levels.size / max_points)))
    idx = idx[::stride]
    flat = vg.values.reshape(K + 1, -1)
    X = np.repeat(nodes[idx], levels.size, axis=0)
    t = np.tile(g.times[levels], idx.size)
    V = flat[levels][:, idx].T.reshape(-1)
    return np.column_stack([X, t]), V


def _lie_sup(spec: SystemSpec, w: PolyExpr, pts: np.ndarray) -> np.ndarray:
    a, bs = lie_parts(spec, w)
    av = a(pts)
    B = np.stack([b(pts) for b in bs], axis=1)
    return av + spec.D.support(B)


def fit_from_value_function(spec: SystemSpec, vg, deg_x: int, deg_t: int, tol: float = DEFAULT_TOL,
                            max_boxes: int = DEFAULT_MAX_BOXES, dense: int = 20000) -> SynthesisResult:
    """Least-squares polynomial fit to V, epsilon-shift, then an eq7 check."""
    if vg is None:
        raise InputError("a solved value grid is required")
    from .hj import _initial_points

    n, T = spec.n, spec.T
    tmpl = Template(n, deg_x, deg_t)
    P, V = _fit_nodes(spec, vg)
    E = np.array(tmpl.exponents, dtype=np.int64)
    M = monomial_values(E, P)
    col = np.maximum(np.abs(M).max(axis=0), 1e-300)
    coef, *_ = np.linalg.lstsq(M / col, V, rcond=None)
    coef = coef / col
    w = tmpl.polynomial(coef)
    resid = float(np.max(np.abs(M @ coef - V)))

    sb = safe_bounding_box(spec.safe)
    S = _halton(n + 1, dense, np.append(sb.lo, 0.0), np.append(sb.hi, T))
    S = S[spec.safe.h(S[:, :n]) <= 0]
    lie_max = float(np.max(_lie_sup(spec, w, S))) if S.size else 0.0
    eps = max(resid, lie_max, 0.0)

    idx, _ = _initial_points(spec, vg)
    delta = float(-vg.values[0][tuple(idx.T)].max())
    threshold = delta / (2.0 * (2.0 * T + 3.0))
    prov = {"route": "fit", "mode": Mode.EQ7.value, "deg_x": deg_x, "deg_t": deg_t,
            "fit_residual": resid, "lie_max": lie_max, "eps_hat": eps, "delta_hat": delta,
            "eps_threshold": threshold}
    diag = {}
    if delta <= 0:
        diag["reason"] = "value function is not negative on X0; the system is not believed safe"
        return SynthesisResult(None, prov, diag)
    if eps >= threshold:
        diag["reason"] = (f"eps_hat={eps:.4g} is not below delta_hat/(2(2T+3))={threshold:.4g}; "
                          "the shift cannot certify at this degree and grid")
        diag["gap"] = eps - threshold
    cert = Certificate(shift_certificate(w, eps, T), 0.0, Mode.EQ7)
    report = check_certificate(spec, cert, tol, max_boxes)
    prov["check"] = report.status
    if report.status == "VALID":
        return SynthesisResult(cert, prov, diag)
    failed = {name: {"status": r.status,
                     "violation": None if r.counterexample is None else r.counterexample.value,
                     "worst": r.worst_value}
              for name, r in report.conditions.items() if r.status != "VALID"}
    diag["failed_conditions"] = failed
    diag.setdefault("reason", "shifted fit did not pass the eq7 check")
    return SynthesisResult(None, prov, diag)
