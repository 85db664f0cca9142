"""Command-line front end.

Every command reads a problem file and writes its outputs below
``<out>/<input hash>/``; the result document ``<command>.json`` is
deterministic apart from its ``timing`` block.

Exit codes: 0 SAFE / VALID / found, 1 UNSAFE / INVALID, 2 UNKNOWN /
INCONCLUSIVE / not found, 10 usage, 11 input, 12 configuration, 13 numeric,
14 file system.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .certificate import (Certificate, Mode, certificate_from_dict, certificate_to_dict,
                          check_certificate, dumps as cert_dumps)
from .errors import ConfigurationError, DomainError, InputError, NumericError
from .hj import Grid, read_value_binary, safety_verdict, solve_value_function, write_value_binary, \
    write_value_csv, evaluate_values, worst_case_replay, _initial_points
from .poly import format_poly
from .problem import Problem, load_problem, problem_hash, with_overrides
from .simulate import monte_carlo_falsify
from .synthesis import Template, cegis_synthesize, fit_from_value_function

EXIT_OK, EXIT_NEGATIVE, EXIT_UNKNOWN = 0, 1, 2
EXIT_USAGE, EXIT_INPUT, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 10, 11, 12, 13, 14
PROBLEM_COPY = "problem.toml"
VALUE_FILE = "value.bin"
CERT_FILE = "certificate.json"
WITNESS_FILE = "witness.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _split_timing(diag: dict, timing: dict) -> dict:
    out = {}
    for k, v in diag.items():
        if k.endswith("runtime_s"):
            timing[k] = v
        else:
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# run directory


def prepare_run(args) -> tuple:
    path = Path(args.problem)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read problem file: {exc}") from exc
    problem = load_problem(path)
    digest = problem_hash(text)
    run = Path(args.out) / digest[:16]
    run.mkdir(parents=True, exist_ok=True)
    (run / PROBLEM_COPY).write_text(text, encoding="utf-8")
    problem = with_overrides(
        problem,
        seed=getattr(args, "seed", None),
        grid=None if getattr(args, "grid", None) is None else (args.grid,) * problem.spec.n,
        dt=getattr(args, "dt", None),
        tol=getattr(args, "tol", None),
        max_boxes=getattr(args, "max_boxes", None),
        samples=getattr(args, "samples", None),
        degree_x=getattr(args, "degree_x", None),
        degree_t=getattr(args, "degree_t", None),
        route=getattr(args, "route", None),
    )
    return problem, digest, run


def write_document(run: Path, command: str, digest: str, status: str, code: int, result: dict,
                   settings: dict, timing: dict) -> Path:
    doc = {
        "command": command,
        "tool_version": __version__,
        "input_hash": digest,
        "status": status,
        "exit_code": code,
        "result": result,
        "settings": settings,
        "timing": timing,
    }
    path = run / f"{command}.json"
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _settings(problem: Problem, keys) -> dict:
    return {k: getattr(problem.solver, k) for k in keys}


def _grid(problem: Problem) -> Grid:
    spec = problem.spec
    return Grid.for_spec(spec, nodes=problem.solver.grid, K=problem.solver.time_steps)


# ---------------------------------------------------------------------------
# commands


def cmd_verify_hj(args) -> int:
    start = time.perf_counter()
    problem, digest, run = prepare_run(args)
    spec = problem.spec
    grid = _grid(problem)
    vg = solve_value_function(spec, grid)
    write_value_binary(vg, run / VALUE_FILE)
    verdict = safety_verdict(spec, vg, problem.solver.dt)
    timing = {}
    result = {
        "verdict": verdict.status.value,
        "margin": verdict.margin,
        "diagnostics": _split_timing(verdict.diagnostics, timing),
        "value_file": VALUE_FILE,
        "grid": {"counts": list(grid.counts), "lower": list(grid.lower), "upper": list(grid.upper),
                 "time_steps": grid.K},
    }
    if verdict.witness is not None:
        verdict.witness.to_csv(run / WITNESS_FILE)
        result["witness_file"] = WITNESS_FILE
        result["witness_exit_time"] = verdict.witness.exit_time
    code = {"SAFE": EXIT_OK, "UNSAFE": EXIT_NEGATIVE}.get(verdict.status.value, EXIT_UNKNOWN)
    timing["wall_clock_s"] = time.perf_counter() - start
    path = write_document(run, "verify-hj", digest, verdict.status.value, code, result,
                          _settings(problem, ["seed", "grid", "time_steps", "dt"]), timing)
    print(f"{verdict.status.value} margin={verdict.margin:.6g} -> {path}")
    return code


def _report_dict(report) -> dict:
    conds = {}
    for name, r in report.conditions.items():
        conds[name] = {"status": r.status, "boxes": r.boxes, "worst_value": r.worst_value,
                       "worst_point": r.worst_point,
                       "counterexample": None if r.counterexample is None else vars(r.counterexample)}
    return {"status": report.status, "boxes_processed": report.boxes_processed, "conditions": conds,
            "counterexample": None if report.counterexample is None else vars(report.counterexample)}


def _load_certificate(args, problem: Problem) -> Certificate:
    if getattr(args, "cert", None):
        cert = certificate_from_dict(json.loads(Path(args.cert).read_text(encoding="utf-8")))
    elif problem.certificate is not None:
        cert = problem.certificate
    else:
        raise InputError("check-cert needs a [certificate] section or --cert FILE")
    if args.mode is not None or args.lam is not None:
        mode = Mode(args.mode) if args.mode is not None else cert.mode
        lam = args.lam if args.lam is not None else (cert.lam if mode is Mode.EQ8 else 0.0)
        cert = Certificate(cert.v, lam, mode)
    return cert


def cmd_check_cert(args) -> int:
    start = time.perf_counter()
    problem, digest, run = prepare_run(args)
    cert = _load_certificate(args, problem)
    report = check_certificate(problem.spec, cert, problem.solver.tol, problem.solver.max_boxes)
    code = {"VALID": EXIT_OK, "INVALID": EXIT_NEGATIVE}.get(report.status, EXIT_UNKNOWN)
    result = {"report": _report_dict(report), "certificate": certificate_to_dict(cert)}
    timing = {"wall_clock_s": time.perf_counter() - start}
    path = write_document(run, "check-cert", digest, report.status, code, result,
                          _settings(problem, ["tol", "max_boxes"]), timing)
    line = report.status
    if report.counterexample is not None:
        ce = report.counterexample
        line += f" {ce.condition} x={ce.x} t={ce.t:.6g} violation={ce.value:.6g}"
    print(f"{line} -> {path}")
    return code


def cmd_synthesize(args) -> int:
    start = time.perf_counter()
    problem, digest, run = prepare_run(args)
    spec, so = problem.spec, problem.solver
    mode = Mode(args.mode) if args.mode is not None else Mode(so.mode)
    lam = args.lam if args.lam is not None else so.lam
    if so.route == "cegis":
        res = cegis_synthesize(spec, Template(spec.n, so.degree_x, so.degree_t), mode,
                               max_iters=so.max_iters, lam=lam, tol=so.tol, max_boxes=so.max_boxes)
    else:
        vg = solve_value_function(spec, _grid(problem))
        res = fit_from_value_function(spec, vg, so.degree_x, so.degree_t, so.tol, so.max_boxes)
    result = {"found": res.found, "provenance": res.provenance, "diagnostics": res.diagnostics}
    if res.found:
        # independent re-check of the returned certificate
        report = check_certificate(spec, res.certificate, so.tol, so.max_boxes)
        result["recheck"] = report.status
        result["certificate"] = certificate_to_dict(res.certificate, res.provenance)
        (run / CERT_FILE).write_text(cert_dumps(res.certificate, _jsonable(res.provenance)) + "\n",
                                     encoding="utf-8")
        status = "VALID" if report.status == "VALID" else report.status
    else:
        status = "NOT_FOUND"
    code = EXIT_OK if status == "VALID" else (EXIT_NEGATIVE if status == "INVALID" else EXIT_UNKNOWN)
    timing = {"wall_clock_s": time.perf_counter() - start}
    path = write_document(run, "synthesize", digest, status, code, result,
                          _settings(problem, ["route", "degree_x", "degree_t", "tol", "max_boxes",
                                              "max_iters", "grid"]) | {"mode": mode.value, "lambda": lam},
                          timing)
    if res.found:
        names = [f"x{i + 1}" for i in range(spec.n)] + ["t"]
        print(f"{status} v = {format_poly(res.certificate.v, names)} -> {path}")
    else:
        print(f"{status} ({res.diagnostics.get('reason', '')}) -> {path}")
    return code


def cmd_falsify(args) -> int:
    start = time.perf_counter()
    problem, digest, run = prepare_run(args)
    so = problem.solver
    traj = monte_carlo_falsify(problem.spec, so.samples, so.dt, so.seed)
    result = {"samples": so.samples, "found": traj is not None}
    if traj is not None:
        traj.to_csv(run / WITNESS_FILE)
        result.update(witness_file=WITNESS_FILE, exit_time=traj.exit_time,
                      x0=traj.states[0].tolist(), signal={"kind": traj.signal.kind,
                                                          "times": list(traj.signal.times),
                                                          "values": [list(v) for v in traj.signal.values]})
        status, code = "WITNESS", EXIT_OK
    else:
        status, code = "NO_WITNESS", EXIT_UNKNOWN
    timing = {"wall_clock_s": time.perf_counter() - start}
    path = write_document(run, "falsify", digest, status, code, result,
                          _settings(problem, ["seed", "samples", "dt"]), timing)
    print(f"{status} -> {path}" + (f" (witness {run / WITNESS_FILE})" if traj is not None else ""))
    return code


# export ---------------------------------------------------------------------


def _write_slices(vg, path: Path) -> None:
    """``V(x, 0)``: 1-D columns ``x V``; 2-D gnuplot blocks ``x1 x2 V``; 3-D the middle x3 slice."""
    g = vg.grid
    axes = g.axes()
    V0 = vg.values[0]
    with open(path, "w") as fh:
        fh.write("# V(x, 0)\n")
        if g.n == 1:
            for x, v in zip(axes[0], V0):
                fh.write(f"{float(x)!r} {float(v)!r}\n")
            return
        if g.n == 3:
            mid = g.counts[2] // 2
            fh.write(f"# slice x3 = {float(axes[2][mid])!r}\n")
            V0 = V0[:, :, mid]
        for i, x1 in enumerate(axes[0]):
            for j, x2 in enumerate(axes[1]):
                fh.write(f"{float(x1)!r} {float(x2)!r} {float(V0[i, j])!r}\n")
            fh.write("\n")


def _write_trajectory(traj, path: Path) -> None:
    with open(path, "w") as fh:
        n = traj.states.shape[1]
        fh.write("# t " + " ".join(f"x{i + 1}" for i in range(n)) + " h\n")
        for t, x, hv in zip(traj.times, traj.states, traj.h_values):
            fh.write(" ".join(repr(float(v)) for v in [t, *x, hv]) + "\n")


def _zero_level(cert: Certificate, spec, path: Path, points: int = 200) -> int:
    """Points of ``v(., 0) = 0`` found by bisection along grid lines of the safe bounding box."""
    from .dynamics import safe_bounding_box

    sb = safe_bounding_box(spec.safe)
    n = spec.n
    lines = max(2, int(round(points ** (1.0 / max(n - 1, 1))))) if n > 1 else 1
    out = []

    def f(X):
        return cert.v(np.column_stack([X, np.zeros(X.shape[0])]))

    for axis in range(n):
        others = [i for i in range(n) if i != axis]
        grids = np.meshgrid(*[np.linspace(sb.lo[i], sb.hi[i], lines) for i in others], indexing="ij")
        base = np.stack([m.ravel() for m in grids], axis=1) if others else np.zeros((1, 0))
        xs = np.linspace(sb.lo[axis], sb.hi[axis], 401)
        for b in base:
            X = np.empty((xs.size, n))
            X[:, axis] = xs
            X[:, others] = b
            vals = f(X)
            for k in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
                a, c = xs[k], xs[k + 1]
                fa = vals[k]
                for _ in range(60):
                    mid = 0.5 * (a + c)
                    P = X[k:k + 1].copy()
                    P[0, axis] = mid
                    fm = f(P)[0]
                    if np.sign(fm) == np.sign(fa):
                        a, fa = mid, fm
                    else:
                        c = mid
                P = X[k].copy()
                P[axis] = 0.5 * (a + c)
                out.append(P)
    with open(path, "w") as fh:
        fh.write("# zero level of v(x, 0): " + " ".join(f"x{i + 1}" for i in range(n)) + "\n")
        for p in sorted(map(tuple, out)):
            fh.write(" ".join(repr(float(v)) for v in p) + "\n")
    return len(out)


def cmd_export(args) -> int:
    start = time.perf_counter()
    run = Path(args.run_dir)
    if not (run / PROBLEM_COPY).exists() or not (run / VALUE_FILE).exists():
        raise FileNotFoundError(f"{run} is not a solved run directory (run verify-hj first)")
    text = (run / PROBLEM_COPY).read_text(encoding="utf-8")
    problem = load_problem(run / PROBLEM_COPY)
    spec = problem.spec
    vg = read_value_binary(run / VALUE_FILE, spec)
    files = []
    write_value_csv(vg, run / "value.csv")
    files.append("value.csv")
    _write_slices(vg, run / "value_t0.dat")
    files.append("value_t0.dat")
    _, probe = _initial_points(spec, vg)
    pv = evaluate_values(vg, probe, 0.0)
    x0 = probe[int(np.argmax(pv))]
    replay = worst_case_replay(spec, x0, vg, problem.solver.dt)
    _write_trajectory(replay, run / "trajectory_worst_case.dat")
    files.append("trajectory_worst_case.dat")
    if (run / WITNESS_FILE).exists():
        rows = np.loadtxt(run / WITNESS_FILE, delimiter=",", skiprows=1, ndmin=2)
        with open(run / "trajectory_witness.dat", "w") as fh:
            fh.write("# t " + " ".join(f"x{i + 1}" for i in range(spec.n)) + " h\n")
            for r in rows:
                fh.write(" ".join(repr(float(v)) for v in [r[0], *r[1:1 + spec.n], r[-1]]) + "\n")
        files.append("trajectory_witness.dat")
    result = {"files": files}
    if (run / CERT_FILE).exists():
        cert = certificate_from_dict(json.loads((run / CERT_FILE).read_text(encoding="utf-8")))
        result["zero_level_points"] = _zero_level(cert, spec, run / "certificate_zero.dat")
        files.append("certificate_zero.dat")
    timing = {"wall_clock_s": time.perf_counter() - start}
    path = write_document(run, "export", problem_hash(text), "EXPORTED", EXIT_OK, result,
                          {"dt": problem.solver.dt}, timing)
    print(f"EXPORTED {len(files)} files -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hjbarrier", description="Finite-horizon safety verification for perturbed ODEs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("problem", help="problem file (TOML)")
        sp.add_argument("--out", default="runs", help="parent directory for run directories")
        sp.add_argument("--seed", type=int, help="override [solver] seed")
        sp.add_argument("--dt", type=float, help="simulation step")

    sp = sub.add_parser("verify-hj", help="solve the value function and report a verdict")
    common(sp)
    sp.add_argument("--grid", type=int, help="nodes per axis")
    sp.set_defaults(func=cmd_verify_hj)

    sp = sub.add_parser("check-cert", help="check a barrier certificate")
    common(sp)
    sp.add_argument("--cert", help="certificate JSON file (instead of [certificate])")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-boxes", type=int)
    sp.add_argument("--mode", choices=[m.value for m in Mode])
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.set_defaults(func=cmd_check_cert)

    sp = sub.add_parser("synthesize", help="synthesize a certificate")
    common(sp)
    sp.add_argument("--route", choices=["cegis", "fit"])
    sp.add_argument("--degree-x", type=int)
    sp.add_argument("--degree-t", type=int)
    sp.add_argument("--mode", choices=["eq5", "eq7", "eq8"])
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-boxes", type=int)
    sp.add_argument("--grid", type=int, help="nodes per axis (fit route)")
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("falsify", help="Monte Carlo search for an exiting trajectory")
    common(sp)
    sp.add_argument("--samples", type=int)
    sp.set_defaults(func=cmd_falsify)

    sp = sub.add_parser("export", help="write CSV and plot data for a solved run directory")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, DomainError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
