"""Problem files: TOML documents describing a system, solver settings and an optional certificate.

Example::

    [system]
    n = 1
    m = 1
    f1 = ["-x1"]
    f2 = [["1"]]

    [disturbance]
    kind = "box"
    center = [0.0]
    radius = [0.1]

    [safe]
    h = "x1^2 - 1"
    box = [[-2.0, 2.0]]

    [init]
    kind = "box"
    bounds = [[-0.2, 0.2]]

    [horizon]
    T = 1.0

    [solver]
    seed = 0
"""

from __future__ import annotations

import hashlib
import re
import sys
from dataclasses import dataclass, replace
from typing import Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .certificate import Certificate, Mode
from .dynamics import Box, DisturbanceSet, InitialSet, SafeSet, SystemSpec
from .errors import InputError, PolyParseError
from .poly import PolyExpr, default_names, format_poly, parse_poly

SECTIONS = {
    "system": ({"n", "m", "f1", "f2"}, {"clamp_box"}),
    "disturbance": ({"kind", "center", "radius"}, set()),
    "safe": ({"h", "box"}, set()),
    "init": ({"kind", "bounds"}, {"g"}),
    "horizon": ({"T"}, set()),
    "solver": ({"seed"}, {"grid", "time_steps", "dt", "tol", "max_boxes", "samples", "degree_x",
                          "degree_t", "route", "mode", "lambda", "max_iters", "dpp_samples"}),
    "certificate": ({"v"}, {"mode", "lambda"}),
}
REQUIRED_SECTIONS = ("system", "disturbance", "safe", "init", "horizon", "solver")


class ProblemError(InputError):
    """Problem-file error carrying an optional 1-based line and column."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message}" + (f" ({', '.join(where)})" if where else ""))


@dataclass(frozen=True)
class SolverSettings:
    seed: int
    grid: Optional[tuple] = None
    time_steps: Optional[int] = None
    dt: Optional[float] = None
    tol: float = 1e-6
    max_boxes: int = 1_000_000
    samples: int = 100_000
    degree_x: int = 2
    degree_t: int = 2
    route: str = "cegis"
    mode: str = "eq5"
    lam: float = 0.0
    max_iters: int = 30
    dpp_samples: int = 2000


@dataclass(frozen=True)
class Problem:
    spec: SystemSpec
    solver: SolverSettings
    certificate: Optional[Certificate] = None


# ---------------------------------------------------------------------------
# parsing


class _Locator:
    """Maps ``(section, key)`` to the line and column where the value starts."""

    def __init__(self, text: str):
        self.pos = {}
        section = None
        for i, line in enumerate(text.splitlines(), start=1):
            m = re.match(r"\s*\[\s*([A-Za-z_][\w-]*)\s*\]", line)
            if m:
                section = m.group(1)
                self.pos[(section, None)] = (i, m.start(1) + 1)
                continue
            m = re.match(r"\s*([A-Za-z_][\w-]*)\s*=\s*", line)
            if m:
                self.pos[(section, m.group(1))] = (i, m.end() + 1)

    def at(self, section, key=None):
        return self.pos.get((section, key), (None, None))


def _names(n: int, with_time: bool = False):
    names = default_names(n + (1 if with_time else 0), with_time)
    aliases = {"x": "x1"} if n == 1 else {}
    return names, aliases


def _poly(text, n, loc, section, key, with_time=False, index=None) -> PolyExpr:
    if not isinstance(text, str):
        line, col = loc.at(section, key)
        raise ProblemError(f"[{section}] {key} must be a polynomial string", line, col)
    names, aliases = _names(n, with_time)
    try:
        return parse_poly(text, names, aliases)
    except PolyParseError as exc:
        line, col = loc.at(section, key)
        if col is not None and index is None:
            # value starts with a quote; poly columns are 1-based within the string
            col = col + exc.column if exc.column is not None else col
        where = f"[{section}] {key}" + (f"[{index}]" if index is not None else "")
        raise ProblemError(f"{where}: {exc.message} (column {exc.column} of the string)", line,
                           col) from exc


def _pairs(value, dim, loc, section, key) -> Box:
    line, col = loc.at(section, key)
    if (not isinstance(value, list) or len(value) != dim
            or any(not isinstance(p, list) or len(p) != 2 for p in value)):
        raise ProblemError(f"[{section}] {key} must be {dim} pairs [lower, upper]", line, col)
    try:
        return Box.from_pairs([[float(a), float(b)] for a, b in value])
    except (TypeError, ValueError) as exc:
        raise ProblemError(f"[{section}] {key}: {exc}", line, col) from exc


def _number_list(value, dim, loc, section, key):
    line, col = loc.at(section, key)
    if not isinstance(value, list) or (dim is not None and len(value) != dim):
        raise ProblemError(f"[{section}] {key} must be a list of {dim} numbers", line, col)
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise ProblemError(f"[{section}] {key} must contain numbers", line, col)
    return tuple(float(v) for v in value)


def _typed(value, kind, loc, section, key):
    line, col = loc.at(section, key)
    ok = {
        int: isinstance(value, int) and not isinstance(value, bool),
        float: isinstance(value, (int, float)) and not isinstance(value, bool),
        str: isinstance(value, str),
    }[kind]
    if not ok:
        raise ProblemError(f"[{section}] {key} must be of type {kind.__name__}", line, col)
    return kind(value)


def parse_problem(text: str, validate: bool = True) -> Problem:
    """Parse and validate a problem document.

    Syntax errors and unknown or missing keys raise :class:`ProblemError`
    with a line and column; set-level violations (S unbounded, X0 not inside
    S, ...) raise :class:`ConfigurationError` from the validation step.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
        raise ProblemError(f"syntax error: {msg}", line, col) from exc
    loc = _Locator(text)
    for section, body in doc.items():
        if section not in SECTIONS:
            line, col = loc.at(section)
            raise ProblemError(f"unknown section [{section}]", line, col)
        if not isinstance(body, dict):
            line, col = loc.at(None, section)
            raise ProblemError(f"{section} must be a table", line, col)
        required, optional = SECTIONS[section]
        for key in body:
            if key not in required | optional:
                line, col = loc.at(section, key)
                raise ProblemError(f"unknown key {key!r} in [{section}]", line, col)
        for key in sorted(required):
            if key not in body:
                line, col = loc.at(section)
                raise ProblemError(f"missing key {key!r} in [{section}]", line, col)
    for section in REQUIRED_SECTIONS:
        if section not in doc:
            raise ProblemError(f"missing section [{section}]")

    sy = doc["system"]
    n = _typed(sy["n"], int, loc, "system", "n")
    m = _typed(sy["m"], int, loc, "system", "m")
    if n < 1 or m < 1:
        line, col = loc.at("system", "n")
        raise ProblemError("n and m must be positive", line, col)
    f1_raw, f2_raw = sy["f1"], sy["f2"]
    if not isinstance(f1_raw, list) or len(f1_raw) != n:
        line, col = loc.at("system", "f1")
        raise ProblemError(f"f1 must list {n} polynomials", line, col)
    if (not isinstance(f2_raw, list) or len(f2_raw) != n
            or any(not isinstance(r, list) or len(r) != m for r in f2_raw)):
        line, col = loc.at("system", "f2")
        raise ProblemError(f"f2 must be an {n}x{m} array of polynomials", line, col)
    f1 = tuple(_poly(p, n, loc, "system", "f1", index=i) for i, p in enumerate(f1_raw))
    f2 = tuple(tuple(_poly(p, n, loc, "system", "f2", index=i) for p in row)
               for i, row in enumerate(f2_raw))
    clamp = _pairs(sy["clamp_box"], n, loc, "system", "clamp_box") if "clamp_box" in sy else None

    di = doc["disturbance"]
    kind = _typed(di["kind"], str, loc, "disturbance", "kind")
    center = _number_list(di["center"], m, loc, "disturbance", "center")
    radius = _number_list(di["radius"], m if kind == "box" else 1, loc, "disturbance", "radius")
    try:
        D = DisturbanceSet(kind, center, radius)
    except InputError as exc:
        line, col = loc.at("disturbance", "kind")
        raise ProblemError(str(exc), line, col) from exc

    sa = doc["safe"]
    safe = SafeSet(_poly(sa["h"], n, loc, "safe", "h"), _pairs(sa["box"], n, loc, "safe", "box"))

    it = doc["init"]
    ikind = _typed(it["kind"], str, loc, "init", "kind")
    ibox = _pairs(it["bounds"], n, loc, "init", "bounds")
    g = _poly(it["g"], n, loc, "init", "g") if "g" in it else None
    try:
        init = InitialSet(ikind, ibox, g)
    except InputError as exc:
        line, col = loc.at("init", "kind")
        raise ProblemError(str(exc), line, col) from exc
    if ikind == "box" and g is not None:
        line, col = loc.at("init", "g")
        raise ProblemError("g is only allowed with kind = \"sublevel\"", line, col)

    T = _typed(doc["horizon"]["T"], float, loc, "horizon", "T")
    spec = SystemSpec(n, m, f1, f2, D, safe, init, T, clamp)

    solver = _parse_solver(doc["solver"], n, loc)
    cert = None
    if "certificate" in doc:
        ce = doc["certificate"]
        v = _poly(ce["v"], n, loc, "certificate", "v", with_time=True)
        mode = _typed(ce.get("mode", "eq5"), str, loc, "certificate", "mode")
        lam = _typed(ce.get("lambda", 0.0), float, loc, "certificate", "lambda")
        try:
            cert = Certificate(v, lam, Mode(mode))
        except ValueError as exc:
            line, col = loc.at("certificate", "mode")
            raise ProblemError(f"[certificate] {exc}", line, col) from exc
    if validate:
        spec.validate()
    return Problem(spec, solver, cert)


def _parse_solver(so, n, loc) -> SolverSettings:
    kw = {"seed": _typed(so["seed"], int, loc, "solver", "seed")}
    if "grid" in so:
        gval = so["grid"]
        if isinstance(gval, list):
            if len(gval) != n or any(isinstance(v, bool) or not isinstance(v, int) for v in gval):
                line, col = loc.at("solver", "grid")
                raise ProblemError(f"grid must be an integer or {n} integers", line, col)
            kw["grid"] = tuple(gval)
        else:
            kw["grid"] = (_typed(gval, int, loc, "solver", "grid"),) * n
    ints = {"time_steps", "max_boxes", "samples", "degree_x", "degree_t", "max_iters", "dpp_samples"}
    for key in ints:
        if key in so:
            kw[key] = _typed(so[key], int, loc, "solver", key)
    for key in ("dt", "tol"):
        if key in so:
            kw[key] = _typed(so[key], float, loc, "solver", key)
    if "lambda" in so:
        kw["lam"] = _typed(so["lambda"], float, loc, "solver", "lambda")
    if "route" in so:
        kw["route"] = _typed(so["route"], str, loc, "solver", "route")
        if kw["route"] not in ("cegis", "fit"):
            line, col = loc.at("solver", "route")
            raise ProblemError("route must be 'cegis' or 'fit'", line, col)
    if "mode" in so:
        kw["mode"] = _typed(so["mode"], str, loc, "solver", "mode")
        if kw["mode"] not in [mo.value for mo in Mode]:
            line, col = loc.at("solver", "mode")
            raise ProblemError("mode must be one of eq3, eq5, eq7, eq8", line, col)
    return SolverSettings(**kw)


def load_problem(path, validate: bool = True) -> Problem:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_problem(fh.read(), validate)


# ---------------------------------------------------------------------------
# serialization


def _fmt(p: PolyExpr, n: int, with_time: bool = False) -> str:
    names, _ = _names(n, with_time)
    return format_poly(p, names)


def problem_to_dict(problem: Problem) -> dict:
    s = problem.spec
    n = s.n
    doc = {
        "system": {
            "n": n,
            "m": s.m,
            "f1": [_fmt(p, n) for p in s.f1],
            "f2": [[_fmt(p, n) for p in row] for row in s.f2],
            "clamp_box": [list(p) for p in s.clamp_box.pairs()],
        },
        "disturbance": {"kind": s.D.kind, "center": list(s.D.center), "radius": list(s.D.radius)},
        "safe": {"h": _fmt(s.safe.h, n), "box": [list(p) for p in s.safe.enclosing.pairs()]},
        "init": {"kind": s.init.kind, "bounds": [list(p) for p in s.init.box.pairs()]},
        "horizon": {"T": s.T},
    }
    if s.init.g is not None:
        doc["init"]["g"] = _fmt(s.init.g, n)
    so = problem.solver
    solver = {"seed": so.seed}
    default = SolverSettings(seed=so.seed)
    for key in ("time_steps", "dt", "tol", "max_boxes", "samples", "degree_x", "degree_t", "route",
                "mode", "max_iters", "dpp_samples"):
        val = getattr(so, key)
        if val is not None and val != getattr(default, key):
            solver[key] = val
    if so.grid is not None:
        solver["grid"] = list(so.grid)
    if so.lam != default.lam:
        solver["lambda"] = so.lam
    doc["solver"] = solver
    if problem.certificate is not None:
        c = problem.certificate
        doc["certificate"] = {"v": _fmt(c.v, n, True), "mode": c.mode.value, "lambda": c.lam}
    return doc


def serialize_problem(problem: Problem) -> str:
    return tomli_w.dumps(problem_to_dict(problem))


def problem_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def with_overrides(problem: Problem, **changes) -> Problem:
    """Copy with solver settings replaced (``None`` values are ignored)."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(problem, solver=replace(problem.solver, **changes))
