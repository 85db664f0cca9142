"""Fixed-step RK4 simulation under piecewise-constant disturbances.

All integration uses the clamped extension of the field, so trajectories
exist on the whole horizon.  Time meshes are built from a shared lattice
``k * dt`` plus the disturbance switch times, which keeps single and batched
integration bit-for-bit comparable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import SystemSpec
from .errors import DomainError, InputError, NumericError

CHUNK = 4096
DEFAULT_SWITCHES = 10


@dataclass(frozen=True)
class DisturbanceSignal:
    """Right-continuous piecewise-constant signal: ``values[k]`` on ``[times[k], times[k+1])``."""

    kind: str
    times: tuple
    values: tuple

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise_constant", "bang_bang"):
            raise InputError(f"unknown signal kind {self.kind!r}")
        times = tuple(float(t) for t in self.times)
        values = tuple(tuple(float(v) for v in np.atleast_1d(row)) for row in self.values)
        if not times or times[0] != 0.0:
            raise InputError("first switch time must be 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InputError("switch times must be strictly increasing")
        if len(values) != len(times):
            raise InputError("one value per switch time is required")
        if len({len(v) for v in values}) != 1:
            raise InputError("signal values must share one dimension")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, d) -> "DisturbanceSignal":
        return cls("constant", (0.0,), (tuple(np.atleast_1d(d)),))

    @property
    def m(self) -> int:
        return len(self.values[0])

    def value_at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return np.array(self.values[max(k, 0)])

    def check_in(self, spec: SystemSpec) -> None:
        if self.m != spec.m:
            raise InputError(f"signal has dimension {self.m}, system expects {spec.m}")
        for v in self.values:
            if not spec.D.contains(v):
                raise DomainError(f"signal value {list(v)} is not in D")
        if self.kind == "bang_bang" and spec.D.kind == "box":
            r = spec.D.r
            for v in self.values:
                off = np.abs(np.asarray(v) - spec.D.c)
                if not np.allclose(off, r, rtol=0, atol=1e-12):
                    raise DomainError("bang-bang values must be vertices of D")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    signal: DisturbanceSignal
    exit_time: Optional[float]
    disturbances: np.ndarray
    h_values: np.ndarray

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path) -> None:
        """Columns ``t, x1..xn, d1..dm, h``."""
        n = self.states.shape[1]
        m = self.disturbances.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"d{j + 1}" for j in range(m)] + ["h"])
            for t, x, d, hv in zip(self.times, self.states, self.disturbances, self.h_values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x]
                           + [repr(float(v)) for v in d] + [repr(float(hv))])


def time_lattice(T: float, dt: float) -> np.ndarray:
    """``0, dt, 2 dt, ...`` up to and including ``T`` (last step may be short)."""
    if not dt > 0:
        raise InputError("dt must be positive")
    k = int(np.ceil(T / dt - 1e-9))
    times = np.arange(k + 1) * dt
    times[-1] = T
    if k >= 1 and times[-2] >= T:
        times = times[:-1]
        times[-1] = T
    return times


def rk4_step(spec: SystemSpec, X, Dv, h):
    k1 = spec.extended_field(X, Dv)
    k2 = spec.extended_field(X + 0.5 * h * k1, Dv)
    k3 = spec.extended_field(X + 0.5 * h * k2, Dv)
    k4 = spec.extended_field(X + h * k3, Dv)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _first_exit(times, hv):
    hit = np.nonzero(hv >= 0)[0]
    return float(times[hit[0]]) if hit.size else None


def integrate(spec: SystemSpec, x0, signal: DisturbanceSignal, dt: float | None = None) -> Trajectory:
    """Classical RK4 over ``[0, T]`` with no step straddling a switch time."""
    x0 = np.asarray(x0, float)
    if x0.shape != (spec.n,):
        raise InputError(f"initial state must have length {spec.n}")
    if not np.all(np.isfinite(x0)):
        raise InputError("initial state must be finite")
    signal.check_in(spec)
    dt = spec.T / 1000 if dt is None else dt
    lattice = time_lattice(spec.T, dt)
    switches = np.array([t for t in signal.times if t < spec.T])
    times = np.union1d(lattice, switches)
    states = np.empty((times.size, spec.n))
    dists = np.empty((times.size, spec.m))
    states[0] = x0
    x = x0[None, :]
    for k in range(times.size - 1):
        d = signal.value_at(times[k])
        dists[k] = d
        with np.errstate(over="ignore", invalid="ignore"):
            x = rk4_step(spec, x, d[None, :], times[k + 1] - times[k])
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state at t={times[k + 1]:.6g}")
        states[k + 1] = x[0]
    dists[-1] = signal.value_at(times[-1])
    hv = spec.safe.h(states)
    return Trajectory(times, states, signal, _first_exit(times, hv), dists, hv)


# ---------------------------------------------------------------------------
# random signals


def random_signals(spec: SystemSpec, rng: np.random.Generator, count: int, lattice: np.ndarray,
                   switches: int = DEFAULT_SWITCHES, first_index: int = 0):
    """Draw ``count`` signals whose switch times lie on ``lattice``.

    Sample ``i`` (global index ``first_index + i``) cycles through three
    families: constant at an extreme point of D, bang-bang between extreme
    points, and piecewise constant with values drawn from all of D.
    Returns switch-time indices ``(count, switches)`` and values
    ``(count, switches, m)``; index 0 always starts at time 0.
    """
    steps = lattice.size - 1
    S = max(1, switches)
    idx = np.sort(rng.integers(1, max(steps, 2), size=(count, S)), axis=1)
    idx[:, 0] = 0
    extreme = spec.D.sample_extreme(rng, count * S).reshape(count, S, spec.m)
    anywhere = spec.D.sample(rng, count * S).reshape(count, S, spec.m)
    family = (first_index + np.arange(count)) % 3
    vals = np.where((family == 2)[:, None, None], anywhere, extreme)
    const = family == 0
    vals[const] = vals[const][:, :1, :]
    return idx, vals, family


def _signal_from_arrays(idx_row, val_row, family, lattice) -> DisturbanceSignal:
    times, values = [], []
    for k, v in zip(idx_row, val_row):
        t = float(lattice[k])
        if times and t == times[-1]:
            values[-1] = tuple(v)
            continue
        if values and tuple(v) == values[-1]:
            continue
        times.append(t)
        values.append(tuple(v))
    kind = {0: "constant", 1: "bang_bang", 2: "piecewise_constant"}[int(family)]
    if kind == "constant":
        times, values = times[:1], values[:1]
    return DisturbanceSignal(kind, tuple(times), tuple(values))


def simulate_batch(spec: SystemSpec, X0, idx, vals, lattice):
    """Integrate many trajectories on a common lattice; returns exit step per row (-1 if none)."""
    N = X0.shape[0]
    X = X0.copy()
    exit_step = np.full(N, -1)
    hv = spec.safe.h(X)
    exit_step[hv >= 0] = 0
    rows = np.arange(N)
    for k in range(lattice.size - 1):
        seg = (idx <= k).sum(axis=1) - 1
        Dv = vals[rows, seg]
        X = rk4_step(spec, X, Dv, lattice[k + 1] - lattice[k])
        if not np.all(np.isfinite(X)):
            raise NumericError(f"non-finite state at t={lattice[k + 1]:.6g}")
        hv = spec.safe.h(X)
        new = (exit_step < 0) & (hv >= 0)
        exit_step[new] = k + 1
    return exit_step, X


def monte_carlo_falsify(spec: SystemSpec, samples: int, dt: float | None = None, seed: int = 0,
                        switches: int = DEFAULT_SWITCHES) -> Optional[Trajectory]:
    """Search for a trajectory from X0 that leaves S within the horizon.

    Random numbers for chunk ``c`` come from ``default_rng([seed, c])`` with a
    fixed chunk size, so the result depends only on ``seed`` and ``samples``.
    The returned witness is the exiting sample of lowest index, re-simulated
    with :func:`integrate`.
    """
    if samples <= 0:
        raise InputError("samples must be positive")
    dt = spec.T / 1000 if dt is None else dt
    lattice = time_lattice(spec.T, dt)
    for c, start in enumerate(range(0, samples, CHUNK)):
        count = min(CHUNK, samples - start)
        rng = np.random.default_rng([seed, c])
        X0 = spec.init.sample(rng, count)
        idx, vals, family = random_signals(spec, rng, count, lattice, switches, first_index=start)
        exit_step, _ = simulate_batch(spec, X0, idx, vals, lattice)
        hit = np.nonzero(exit_step >= 0)[0]
        for i in hit:
            sig = _signal_from_arrays(idx[i], vals[i], family[i], lattice)
            traj = integrate(spec, X0[i], sig, dt)
            if traj.exit_time is not None:
                return traj
    return None


def worst_case_replay(spec: SystemSpec, x0, grid, dt: float | None = None) -> Trajectory:
    """Integrate forward with the disturbance that maximizes ``grad V . f2(x) d``.

    ``grid`` is a solved value grid; its gradient is taken by central
    differences of the interpolant with one grid spacing, at the query point
    clamped into the grid.
    """
    from .hj import value_gradient

    x0 = np.asarray(x0, float)
    if x0.shape != (spec.n,):
        raise InputError(f"initial state must have length {spec.n}")
    g = grid.grid
    if not (np.all(x0 >= np.array(g.lower)) and np.all(x0 <= np.array(g.upper))):
        raise DomainError("initial state is not covered by the value grid")
    dt = spec.T / 1000 if dt is None else dt
    times = time_lattice(spec.T, dt)
    states = np.empty((times.size, spec.n))
    dists = np.empty((times.size, spec.m))
    states[0] = x0
    x = x0[None, :]
    for k in range(times.size - 1):
        p = value_gradient(grid, x[0], times[k])
        xc = spec.clamp_box.clamp(x)
        b = np.einsum("i,ij->j", p, spec.input_matrix(xc)[0])
        d = spec.D.maximizer(b[None, :])[0]
        dists[k] = d
        with np.errstate(over="ignore", invalid="ignore"):
            x = rk4_step(spec, x, d[None, :], times[k + 1] - times[k])
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state at t={times[k + 1]:.6g}")
        states[k + 1] = x[0]
    dists[-1] = dists[-2] if times.size > 1 else spec.D.c
    sw_t, sw_v = [], []
    for t, d in zip(times[:-1], dists[:-1]):
        if not sw_v or tuple(d) != sw_v[-1]:
            sw_t.append(float(t))
            sw_v.append(tuple(d))
    kind = "constant" if len(sw_t) == 1 else "piecewise_constant"
    signal = DisturbanceSignal(kind, tuple(sw_t), tuple(sw_v))
    hv = spec.safe.h(states)
    return Trajectory(times, states, signal, _first_exit(times, hv), dists, hv)
