"""Grid solver for the obstacle Hamilton-Jacobi equation of the worst-case value.

``V(x, t)`` is the largest value of ``h`` that any admissible disturbance can
force along the trajectory from ``x`` over ``[t, T]``.  It is computed by
marching backward from ``V(x, T) = h(x)`` with a monotone Lax-Friedrichs
scheme and taking the pointwise maximum with ``h`` after every step.
"""

from __future__ import annotations

import csv
import struct
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .dynamics import SystemSpec, field_speed_bounds
from .errors import ConfigurationError, DomainError, InputError
from .simulate import (Trajectory, random_signals, rk4_step, time_lattice, worst_case_replay)

CFL_NUMBER = 0.5
MIN_TIME_STEPS = 10
MAX_DIM = 3


def default_nodes(n: int) -> int:
    if n > MAX_DIM:
        raise ConfigurationError(
            f"curse of dimensionality: grid solver supports n <= {MAX_DIM}, got n = {n}")
    return 101 if n <= 2 else 51


@dataclass(frozen=True)
class Grid:
    lower: tuple
    upper: tuple
    counts: tuple
    K: int
    T: float

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        counts = tuple(int(c) for c in self.counts)
        if not (len(lo) == len(hi) == len(counts)):
            raise InputError("grid bounds and counts must have the same length")
        if len(counts) > MAX_DIM:
            raise ConfigurationError(
                f"curse of dimensionality: grid solver supports n <= {MAX_DIM}, got n = {len(counts)}")
        if any(c < 3 for c in counts):
            raise ConfigurationError("grid needs at least 3 nodes per axis")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ConfigurationError("grid upper bounds must exceed lower bounds")
        if int(self.K) < 1 or not self.T > 0:
            raise ConfigurationError("grid needs K >= 1 time steps and T > 0")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "T", float(self.T))

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.counts) - 1)

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.K + 1)

    def axes(self) -> list:
        return [np.linspace(a, b, c) for a, b, c in zip(self.lower, self.upper, self.counts)]

    def nodes(self) -> np.ndarray:
        """All nodes, row-major, shape ``(prod(counts), n)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cfl_limit(self, alpha) -> float:
        rate = float(np.sum(np.asarray(alpha) / self.spacing))
        return np.inf if rate == 0 else CFL_NUMBER / rate

    @classmethod
    def for_spec(cls, spec: SystemSpec, nodes=None, lower=None, upper=None, K=None) -> "Grid":
        """Grid over the clamp box (or given bounds) with the smallest CFL-compliant K."""
        if nodes is None:
            nodes = default_nodes(spec.n)
        counts = tuple(np.broadcast_to(np.asarray(nodes, int), (spec.n,)))
        lower = spec.clamp_box.lower if lower is None else tuple(np.atleast_1d(lower))
        upper = spec.clamp_box.upper if upper is None else tuple(np.atleast_1d(upper))
        if K is None:
            probe = cls(lower, upper, counts, 1, spec.T)
            limit = probe.cfl_limit(field_speed_bounds(spec))
            K = max(MIN_TIME_STEPS, int(np.ceil(spec.T / limit * (1 - 1e-12)))) if np.isfinite(limit) \
                else MIN_TIME_STEPS
        return cls(lower, upper, counts, K, spec.T)


@dataclass
class ValueGrid:
    grid: Grid
    values: np.ndarray  # (K + 1, *counts); index k is time k * dt
    alpha: np.ndarray
    h_nodes: np.ndarray
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values.flags.writeable = False

    @property
    def interpolator(self) -> RegularGridInterpolator:
        cache = self.__dict__.setdefault("_interp", None)
        if cache is None:
            cache = RegularGridInterpolator([self.grid.times] + self.grid.axes(), self.values,
                                            method="linear", bounds_error=True)
            self.__dict__["_interp"] = cache
        return cache

    def with_values(self, values) -> "ValueGrid":
        """Copy carrying different values (used to inject faults in tests)."""
        return ValueGrid(self.grid, np.array(values, dtype=float), self.alpha, self.h_nodes)


def _one_sided_differences(V, spacing):
    """Backward and forward differences per axis; boundaries reuse the interior one-sided value."""
    minus, plus = [], []
    for ax, dx in enumerate(spacing):
        d = np.diff(V, axis=ax) / dx
        first = np.take(d, [0], axis=ax)
        last = np.take(d, [-1], axis=ax)
        minus.append(np.concatenate([first, d], axis=ax))
        plus.append(np.concatenate([d, last], axis=ax))
    return minus, plus


def solve_value_function(spec: SystemSpec, grid: Grid) -> ValueGrid:
    """Backward Lax-Friedrichs march with the obstacle ``V >= h``.

    Each step computes ``V_k = max(h, V_{k+1} + dt * H_LF)`` with
    ``H_LF = H(x, (p- + p+)/2) + sum_i alpha_i (p+_i - p-_i) / 2``.  The result
    is also kept pointwise above ``V_{k+1}``.  Away from the grid boundary the
    monotone scheme already guarantees this; at boundary nodes the one-sided
    differences can break it, and ``stats`` records how often the fix acted.
    """
    if grid.n != spec.n:
        raise ConfigurationError(f"grid has dimension {grid.n}, system has {spec.n}")
    if grid.n > MAX_DIM:
        raise ConfigurationError("curse of dimensionality: n > 3 is not supported")
    if not (np.all(np.array(grid.lower) <= spec.clamp_box.lo + 1e-12)
            and np.all(np.array(grid.upper) >= spec.clamp_box.hi - 1e-12)):
        raise ConfigurationError("grid must cover the clamp box")
    alpha = field_speed_bounds(spec)
    limit = grid.cfl_limit(alpha)
    if grid.dt > limit * (1 + 1e-9):
        raise ConfigurationError(
            f"CFL violated: dt = {grid.dt:.6g} exceeds {limit:.6g}; use K >= {int(np.ceil(grid.T / limit))}")

    shape = grid.counts
    X = grid.nodes()
    Xc = spec.clamp_box.clamp(X)
    f1 = spec.drift(Xc)
    f2 = spec.input_matrix(Xc)
    h = spec.safe.h(X).reshape(shape)
    spacing = grid.spacing
    dt = grid.dt

    values = np.empty((grid.K + 1,) + shape)
    values[grid.K] = h
    V = h.copy()
    interior = (slice(1, -1),) * grid.n
    stats = {"monotone_fix_nodes": 0, "monotone_fix_interior": 0, "monotone_fix_max": 0.0}
    for k in range(grid.K - 1, -1, -1):
        minus, plus = _one_sided_differences(V, spacing)
        P = np.stack([0.5 * (a + b).ravel() for a, b in zip(minus, plus)], axis=1)
        b = np.einsum("ni,nij->nj", P, f2)
        ham = np.einsum("ni,ni->n", P, f1) + spec.D.support(b)
        diss = sum(alpha[i] * 0.5 * (plus[i] - minus[i]) for i in range(grid.n))
        V_new = V + dt * (ham.reshape(shape) + diss)
        V_new = np.maximum(V_new, h)
        gap = V - V_new
        if gap.max() > 0:
            stats["monotone_fix_nodes"] += int((gap > 0).sum())
            stats["monotone_fix_interior"] += int((gap[interior] > 0).sum())
            stats["monotone_fix_max"] = max(stats["monotone_fix_max"], float(gap.max()))
            V_new = np.maximum(V_new, V)
        values[k] = V_new
        V = V_new
    return ValueGrid(grid, values, alpha, h, stats)


def evaluate_value(vg: ValueGrid, x, t: float) -> float:
    """Multilinear in space, linear in time."""
    x = np.asarray(x, float)
    if x.shape != (vg.grid.n,):
        raise InputError(f"state must have length {vg.grid.n}")
    if not (0.0 <= t <= vg.grid.T):
        raise DomainError(f"t = {t} outside [0, {vg.grid.T}]")
    if np.any(x < np.array(vg.grid.lower)) or np.any(x > np.array(vg.grid.upper)):
        raise DomainError(f"x = {x.tolist()} outside the grid")
    return float(vg.interpolator(np.concatenate([[t], x])[None, :])[0])


def evaluate_values(vg: ValueGrid, X, t) -> np.ndarray:
    """Batched :func:`evaluate_value` with points clipped into the grid."""
    X = np.atleast_2d(np.asarray(X, float))
    X = np.clip(X, vg.grid.lower, vg.grid.upper)
    tt = np.clip(np.broadcast_to(np.asarray(t, float), (X.shape[0],)), 0.0, vg.grid.T)
    return vg.interpolator(np.column_stack([tt, X]))


def value_gradient(vg: ValueGrid, x, t: float) -> np.ndarray:
    """Central difference of the interpolant with one grid spacing per axis."""
    g = vg.grid
    x = np.clip(np.asarray(x, float), g.lower, g.upper)
    h = g.spacing
    pts = []
    for i in range(g.n):
        e = np.zeros(g.n)
        e[i] = h[i]
        pts.append(x + e)
        pts.append(x - e)
    pts = np.clip(np.array(pts), g.lower, g.upper)
    vals = evaluate_values(vg, pts, t)
    steps = (pts[0::2] - pts[1::2])[np.arange(g.n), np.arange(g.n)]
    return (vals[0::2] - vals[1::2]) / np.where(steps > 0, steps, 1.0)


# ---------------------------------------------------------------------------
# verdicts


class Status(str, Enum):
    SAFE = "SAFE"
    UNSAFE = "UNSAFE"
    UNKNOWN = "UNKNOWN"


@dataclass
class Verdict:
    status: Status
    margin: Optional[float] = None
    witness: Optional[Trajectory] = None
    diagnostics: dict = field(default_factory=dict)


def empirical_lipschitz(vg: ValueGrid, k: int = 0, region=None) -> float:
    """Largest gradient norm estimate from neighbour difference quotients.

    Only pairs of neighbouring nodes that both lie in ``region`` (a boolean
    node mask, default the closed safe set ``h <= 0``) are used.
    """
    V = vg.values[k]
    region = (vg.h_nodes <= 0) if region is None else region
    comps = []
    for ax, dx in enumerate(vg.grid.spacing):
        q = np.abs(np.diff(V, axis=ax)) / dx
        both = np.logical_and(np.take(region, range(0, V.shape[ax] - 1), axis=ax),
                              np.take(region, range(1, V.shape[ax]), axis=ax))
        comps.append(q[both].max() if both.any() else 0.0)
    return float(np.linalg.norm(comps))


def numerical_margin(vg: ValueGrid) -> tuple:
    """``(delta_num, L_hat, interpolation term, dissipation term)``.

    The interpolation term is ``L_hat * max(dx)``.  The dissipation term
    ``L_hat * sqrt(T * sum_i alpha_i dx_i / 2)`` is the slope of V times the
    diffusion length of the scheme's artificial viscosity over the horizon.
    """
    g = vg.grid
    L = empirical_lipschitz(vg, 0)
    interp = L * float(np.max(g.spacing))
    diss = L * float(np.sqrt(g.T * np.sum(vg.alpha * g.spacing) / 2.0))
    return interp + diss, L, interp, diss


def _initial_points(spec: SystemSpec, vg: ValueGrid):
    """Covering nodes of X0 (for the bound) and points inside X0 (for replay)."""
    g = vg.grid
    box = spec.init.box
    lo = np.array(g.lower)
    h = g.spacing
    if np.any(box.lo < lo - 1e-12) or np.any(box.hi > np.array(g.upper) + 1e-12):
        raise ConfigurationError("X0 is not covered by the grid")
    i0 = np.floor((box.lo - lo) / h + 1e-9).astype(int)
    i1 = np.ceil((box.hi - lo) / h - 1e-9).astype(int)
    i1 = np.minimum(i1, np.array(g.counts) - 1)
    ranges = [np.arange(a, b + 1) for a, b in zip(i0, i1)]
    idx = np.stack([m.ravel() for m in np.meshgrid(*ranges, indexing="ij")], axis=1)
    cover = lo + idx * h
    if spec.init.g is not None:
        # keep nodes of cells that may meet {g <= 0}
        glo, _ = spec.init.g.bounds(cover - h, cover + h)
        keep = glo <= 0
        idx, cover = idx[keep], cover[keep]
        if idx.shape[0] == 0:
            raise ConfigurationError("X0 appears empty on the grid")
    inside = cover[[spec.init.contains(p) for p in cover]]
    extra = box.vertices() if spec.init.kind == "box" else np.zeros((0, spec.n))
    if spec.init.kind == "box":
        extra = np.vstack([extra, box.center[None, :]])
    probe = np.vstack([inside, extra]) if inside.size else extra
    if probe.shape[0] == 0:
        probe = spec.init.sample(np.random.default_rng(0), 64)
    return idx, probe


def safety_verdict(spec: SystemSpec, vg: ValueGrid, dt_sim: float | None = None) -> Verdict:
    """SAFE when ``V(., 0)`` on X0 stays below the numerical margin; UNSAFE only with a witness."""
    start = time.perf_counter()
    idx, probe = _initial_points(spec, vg)
    V0 = vg.values[0]
    M = float(V0[tuple(idx.T)].max())
    delta, L, interp, diss = numerical_margin(vg)
    diagnostics = {
        "grid_counts": list(vg.grid.counts),
        "grid_spacing": vg.grid.spacing.tolist(),
        "time_steps": vg.grid.K,
        "lipschitz_estimate": L,
        "lipschitz_note": "empirical estimate from grid difference quotients",
        "delta_num": delta,
        "interpolation_term": interp,
        "dissipation_term": diss,
        "max_V0_on_X0": M,
        "solver_stats": dict(vg.stats),
    }
    if M <= -delta:
        diagnostics["runtime_s"] = time.perf_counter() - start
        return Verdict(Status.SAFE, margin=M, diagnostics=diagnostics)
    pv = evaluate_values(vg, probe, 0.0)
    order = np.argsort(-pv, kind="stable")
    tried = []
    for j in order[:3]:
        x0 = probe[j]
        traj = worst_case_replay(spec, x0, vg, dt_sim)
        tried.append(x0.tolist())
        if traj.exit_time is not None and traj.exit_time <= spec.T:
            diagnostics["replay_start"] = x0.tolist()
            diagnostics["runtime_s"] = time.perf_counter() - start
            return Verdict(Status.UNSAFE, margin=M, witness=traj, diagnostics=diagnostics)
    diagnostics["replay_starts"] = tried
    diagnostics["reason"] = "value bound above -delta_num but replay found no exit (grid too coarse?)"
    diagnostics["runtime_s"] = time.perf_counter() - start
    return Verdict(Status.UNKNOWN, margin=M, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# dynamic programming consistency


@dataclass
class DPPReport:
    checked: int
    violations: int
    max_violation: float
    skipped: int
    worst: Optional[dict] = None


def _extreme_disturbances(spec: SystemSpec) -> np.ndarray:
    if spec.D.kind == "box":
        return spec.D.vertices()
    eye = np.eye(spec.m)
    return spec.D.c + spec.D.radius[0] * np.vstack([eye, -eye])


def _node_sweep(spec: SystemSpec, vg: ValueGrid, tol: float):
    """One-step check at every node of the closed safe set and every time level.

    From node ``x`` at ``t_k`` each extreme disturbance is held for one step;
    the payoff ``max(h(x), h(x'), V(x', t_{k+1}))`` must not exceed
    ``V(x, t_k)`` by more than ``tol``.
    """
    g = vg.grid
    lo, hi = np.array(g.lower), np.array(g.upper)
    X = g.nodes()
    keep = spec.safe.h(X) <= 0
    X = X[keep]
    hX = spec.safe.h(X)
    checked = skipped = bad = 0
    worst_v, worst = -np.inf, None
    for d in _extreme_disturbances(spec):
        X1 = rk4_step(spec, X, d[None, :], g.dt)
        inside = np.all((X1 >= lo) & (X1 <= hi), axis=1)
        h1 = spec.safe.h(X1)
        for k in range(g.K):
            v0 = vg.values[k].reshape(-1)[keep]
            v1 = evaluate_values(vg, X1, g.times[k + 1])
            viol = np.where(inside, np.maximum(np.maximum(hX, h1), v1) - v0, -np.inf)
            checked += int(inside.sum())
            skipped += int((~inside).sum())
            bad += int((viol > tol).sum())
            j = int(np.argmax(viol))
            if viol[j] > worst_v:
                worst_v = float(viol[j])
                worst = {"x": X[j].tolist(), "t": float(g.times[k]), "s": float(g.times[k + 1]),
                         "d": d.tolist(), "V": float(v0[j]), "payoff": float(v0[j] + viol[j])}
    return checked, skipped, bad, worst_v, worst


def check_dpp(spec: SystemSpec, vg: ValueGrid, samples: int, seed: int, tol: float,
              dt: float | None = None, node_sweep: bool = True) -> DPPReport:
    """Check that V dominates the payoff of sampled single disturbance signals.

    For sampled ``x`` in the closed safe set (inside the grid), ``t < s <= T``
    and a random signal, the payoff is the running max of ``h`` along the
    trajectory over ``[t, s]`` joined with ``V(x(s), s)``.  A violation is
    ``payoff - V(x, t) > tol``.  Samples whose endpoint leaves the grid are
    skipped.  With ``node_sweep`` the same inequality is also checked for one
    time step from every grid node under every extreme disturbance, which
    catches errors confined to a single node.
    """
    g = vg.grid
    rng = np.random.default_rng(seed)
    lo, hi = np.array(g.lower), np.array(g.upper)
    pts = []
    while sum(len(p) for p in pts) < samples:
        cand = lo + rng.random((4 * samples, g.n)) * (hi - lo)
        pts.append(cand[spec.safe.h(cand) <= 0])
    X0 = np.concatenate(pts)[:samples]
    t0 = rng.random(samples) * g.T
    s = t0 + rng.random(samples) * (g.T - t0)
    dt = g.T / 400 if dt is None else dt
    steps = max(2, int(np.ceil((s - t0).max() / dt)))
    # per-sample substeps: every sample uses `steps` equal steps over its own [t, s]
    lattice = np.linspace(0.0, 1.0, steps + 1)
    idx, vals, _ = random_signals(spec, rng, samples, lattice)
    X = X0.copy()
    running = spec.safe.h(X)
    rows = np.arange(samples)
    hstep = (s - t0) / steps
    for k in range(steps):
        seg = (idx <= k).sum(axis=1) - 1
        X = rk4_step(spec, X, vals[rows, seg], hstep[:, None])
        running = np.maximum(running, spec.safe.h(X))
    inside = np.all((X >= lo) & (X <= hi), axis=1)
    v_start = evaluate_values(vg, X0, t0)
    v_end = evaluate_values(vg, X, s)
    payoff = np.maximum(running, v_end)
    viol = np.where(inside, payoff - v_start, -np.inf)
    checked = int(inside.sum())
    skipped = int((~inside).sum())
    violations = int((viol > tol).sum())
    worst_v, worst = -np.inf, None
    if inside.any():
        j = int(np.argmax(viol))
        worst_v = float(viol[j])
        worst = {"x": X0[j].tolist(), "t": float(t0[j]), "s": float(s[j]),
                 "V": float(v_start[j]), "payoff": float(payoff[j])}
    if node_sweep:
        c2, s2, b2, wv2, w2 = _node_sweep(spec, vg, tol)
        checked += c2
        skipped += s2
        violations += b2
        if wv2 > worst_v:
            worst_v, worst = wv2, w2
    return DPPReport(checked, violations, worst_v if worst is not None else 0.0, skipped, worst)


# ---------------------------------------------------------------------------
# export

_MAGIC = b"HJVG0001"


def write_value_csv(vg: ValueGrid, path) -> None:
    """Rows ``t, x1..xn, V`` in time-major, row-major node order."""
    g = vg.grid
    X = g.nodes()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(g.n)] + ["V"])
        for k, t in enumerate(g.times):
            vals = vg.values[k].ravel()
            for x, v in zip(X, vals):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(v))])


def write_value_binary(vg: ValueGrid, path) -> None:
    """Little-endian dump.

    Header: 8-byte magic, int64 n, int64 time levels (K+1), float64 T,
    float64 lower[n], float64 upper[n], int64 counts[n].  Payload: float64
    values, time-major then row-major over nodes.
    """
    g = vg.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqd", g.n, g.K + 1, g.T))
        fh.write(np.asarray(g.lower, "<f8").tobytes())
        fh.write(np.asarray(g.upper, "<f8").tobytes())
        fh.write(np.asarray(g.counts, "<i8").tobytes())
        fh.write(np.ascontiguousarray(vg.values, dtype="<f8").tobytes())


def read_value_binary(path, spec: SystemSpec | None = None) -> ValueGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise InputError("not a value-grid dump")
    n, levels, T = struct.unpack_from("<qqd", data, 8)
    off = 8 + 24
    lower = np.frombuffer(data, "<f8", n, off)
    off += 8 * n
    upper = np.frombuffer(data, "<f8", n, off)
    off += 8 * n
    counts = np.frombuffer(data, "<i8", n, off)
    off += 8 * n
    values = np.frombuffer(data, "<f8", int(levels * np.prod(counts)), off)
    grid = Grid(tuple(lower), tuple(upper), tuple(counts), int(levels) - 1, T)
    values = values.reshape((int(levels),) + tuple(int(c) for c in counts)).copy()
    if spec is not None:
        alpha = field_speed_bounds(spec)
        h = spec.safe.h(grid.nodes()).reshape(grid.counts)
    else:
        alpha = np.zeros(n)
        h = values[-1].copy()
    return ValueGrid(grid, values, alpha, h)
