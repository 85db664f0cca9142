"""Acceptance criteria C1 to C10.

Each test records one PASS/FAIL line through the ``acceptance`` fixture; the
lines are repeated in the terminal summary.
"""

import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from hjbarrier.benchmarks import BENCHMARKS
from hjbarrier.certificate import (Certificate, Mode, check_certificate, condition_value,
                                   transform_lambda)
from hjbarrier.cli import main
from hjbarrier.dynamics import DisturbanceSet
from hjbarrier.hj import Grid, Status, check_dpp, safety_verdict, solve_value_function
from hjbarrier.poly import PolyExpr
from hjbarrier.problem import problem_hash
from hjbarrier.simulate import monte_carlo_falsify, rk4_step
from hjbarrier.synthesis import Template, cegis_synthesize, fit_from_value_function

from _systems import cert1, cert2, system1, system2

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def stationary(nodes=201):
    s = system1(f1="0", f2="0", x0=(-0.5, 0.5), clamp=(-1.5, 1.5))
    return s, Grid.for_spec(s, nodes=nodes, lower=-2.0, upper=2.0)


def drift(nodes=201):
    s = system1(f1="1", f2="0", h="x", x0=(-0.5, -0.4), clamp=(-1.5, 1.5))
    return s, Grid.for_spec(s, nodes=nodes, lower=-2.0, upper=2.0)


def bang(nodes=201):
    s = system1(f1="0", f2="1", D=(0.0, 1.0), x0=(-0.1, 0.1), T=0.5)
    return s, Grid.for_spec(s, nodes=nodes, lower=-2.0, upper=2.0)


def max_error(vg, exact, mask):
    X = vg.grid.nodes()[:, 0]
    keep = mask(X)
    return max(float(np.max(np.abs(vg.values[k] - exact(X, vg.grid.times[k]))[keep]))
               for k in range(vg.grid.K + 1))


def drift_error(nodes):
    s, g = drift(nodes)
    return max_error(solve_value_function(s, g), lambda x, t: x + (1 - t), lambda x: x <= 0.5)


def bang_error(nodes):
    s, g = bang(nodes)
    vg = solve_value_function(s, g)
    X = vg.grid.nodes()[:, 0]
    keep = np.abs(X) <= 1
    return float(np.max(np.abs(vg.values[0] - ((np.abs(X) + 0.5) ** 2 - 1))[keep]))


# ---------------------------------------------------------------------------


def test_c1_stationary_value_function(acceptance):
    s, g = stationary()
    start = time.perf_counter()
    vg = solve_value_function(s, g)
    elapsed = time.perf_counter() - start
    err = max_error(vg, lambda x, t: x**2 - 1, lambda x: np.ones_like(x, bool))
    acceptance("C1", err <= 0.05 and elapsed < 5.0,
               f"stationary max|V - h| = {err:.3g} (<= 0.05), solve {elapsed:.2f} s (< 5 s)")


def test_c2_drift_value_function(acceptance):
    e201, e401 = drift_error(201), drift_error(401)
    ratio = e401 / e201 if e201 > 0 else float("nan")
    halving = 0.3 <= ratio <= 0.7
    # supplementary: the same refinement on the adversarial case, whose error is first order
    b201, b401 = bang_error(201), bang_error(401)
    note = ("; both drift errors are round-off because the scheme reproduces linear data exactly"
            if max(e201, e401) <= 1e-12 else "")
    acceptance("C2", e201 <= 0.03 and halving,
               f"drift error {e201:.3g} at 201 nodes (<= 0.03), {e401:.3g} at 401, ratio {ratio:.3g} "
               f"(required 0.5 +- 40%){note}; adversarial case ratio {b401 / b201:.3f}")


def test_c3_adversarial_value_function(acceptance):
    err = bang_error(201)
    acceptance("C3", err <= 0.05, f"max |V - ((|x| + 0.5)^2 - 1)| on |x| <= 1 = {err:.3g} (<= 0.05)")


def test_c4_verdict_agreement(acceptance):
    start = time.perf_counter()
    rows, bad = [], []
    for b in BENCHMARKS:
        s = b.problem().spec
        vg = solve_value_function(s, Grid.for_spec(s))
        verdict = safety_verdict(s, vg)
        witness = monte_carlo_falsify(s, 100_000, seed=0)
        rows.append(f"{b.name}={verdict.status.value}/{'W' if witness is not None else '-'}")
        if witness is not None and verdict.status is Status.SAFE:
            bad.append(f"{b.name}: SAFE but a witness exists")
        if b.safe and verdict.status is not Status.SAFE:
            bad.append(f"{b.name}: closed-form safe but {verdict.status.value}")
        if b.safe and witness is not None:
            bad.append(f"{b.name}: closed-form safe but falsified")
    elapsed = time.perf_counter() - start
    ok = not bad and len(BENCHMARKS) >= 8 and elapsed < 300
    acceptance("C4", ok, f"{len(BENCHMARKS)} instances in {elapsed:.0f} s (< 300 s); "
               + (", ".join(bad) if bad else " ".join(rows)))


def test_c5_invariants(acceptance):
    counts = {"terminal": 0, "obstacle": 0, "time": 0, "doubling": 0, "interior_fix": 0}
    for b in BENCHMARKS:
        s = b.problem().spec
        s2 = dataclasses.replace(s, D=DisturbanceSet(s.D.kind, s.D.center,
                                                     tuple(2 * r for r in s.D.radius)))
        g2 = Grid.for_spec(s2)
        g = Grid.for_spec(s, K=g2.K)
        vg, vg2 = solve_value_function(s, g), solve_value_function(s2, g2)
        V = vg.values
        counts["terminal"] += int(np.count_nonzero(V[-1] != vg.h_nodes))
        counts["obstacle"] += int(np.count_nonzero(V < vg.h_nodes[None]))
        counts["time"] += int(np.count_nonzero(V[:-1] < V[1:]))
        counts["doubling"] += int(np.count_nonzero(vg2.values < V))
        counts["interior_fix"] += vg.stats["monotone_fix_interior"]
    acceptance("C5", not any(counts.values()),
               "violations " + ", ".join(f"{k}={v}" for k, v in counts.items()))


def _hand_built():
    still = system1(f1="0", f2="0")
    decay = system1(f1="-x", f2="1", D=(0.0, 0.1), x0=(-0.2, 0.2))
    decay2 = system2(["-x1", "-x2"], [["1", "0"], ["0", "1"]],
                     D=DisturbanceSet("box", (0.0, 0.0), (0.2, 0.2)))
    return [
        (still, Certificate(cert1("x^2 - 1"), mode=Mode.EQ5), "t"),
        (decay, Certificate(cert1("x^2 - 0.01*t - 0.9"), mode=Mode.EQ5), "t"),
        (decay, Certificate(cert1("x^2 - 0.01*t - 0.5"), mode=Mode.EQ7), "t"),
        (decay, Certificate(cert1("x^2 - 1"), lam=-1.0, mode=Mode.EQ8), "sign"),
        (decay2, Certificate(cert2("x1^2 + x2^2 - 0.05*t - 0.9"), mode=Mode.EQ5), "t"),
        (still, Certificate(cert1("x^2 - 1"), mode=Mode.EQ3_STATIC), "sign"),
    ]


def test_c6_checker_soundness_and_sensitivity(acceptance):
    problems = []
    for i, (s, cert, how) in enumerate(_hand_built()):
        r = check_certificate(s, cert)
        if r.status != "VALID":
            problems.append(f"#{i} valid certificate reported {r.status}")
        n = cert.n
        if how == "t":
            v = cert.v + PolyExpr.variable(n + 1, n) * 0.1
        else:
            v = cert.v - 2 * dict(cert.v.terms)[(0,) * (n + 1)]
        bad = Certificate(v, cert.lam, cert.mode)
        r = check_certificate(s, bad)
        if r.status != "INVALID":
            problems.append(f"#{i} perturbed certificate reported {r.status}")
            continue
        for ce in r.counterexamples:
            if not condition_value(s, bad, ce) > 1e-6:
                problems.append(f"#{i} counterexample not confirmed")
    acceptance("C6", not problems,
               "; ".join(problems) if problems else
               f"{len(_hand_built())} valid certificates accepted, every perturbation rejected "
               "with a confirmed counterexample")


def _sampled_eq5_on_transform(s, cert, rng, boundary):
    """Check the plain sign conditions on ``v' = exp(-lambda t) v`` at 10^4 points."""
    tr = transform_lambda(cert)
    n, T = s.n, s.T
    N = 10_000
    k = N // 4
    X0 = s.init.sample(rng, k)
    init_ok = np.all(tr.value(np.column_stack([X0, np.zeros(k)])) < 0)
    B = boundary(rng, k)
    bnd_ok = np.all(tr.value(np.column_stack([B, rng.uniform(0, T, k)])) >= -1e-12)
    m = N - 2 * k
    X = rng.uniform(-1, 1, (4 * m, n))
    X = X[s.safe.h(X) <= 0][:m]
    P = np.column_stack([X, rng.uniform(0, T, X.shape[0])])
    worst = np.full(X.shape[0], -np.inf)
    for d in s.D.vertices():
        worst = np.maximum(worst, tr.lie(s, P, d))
    return bool(init_ok and bnd_ok and np.all(worst <= 0))


def test_c7_lambda_relaxation_consistency(acceptance):
    decay = system1(f1="-x", f2="1", D=(0.0, 0.1), x0=(-0.2, 0.2))
    decay2 = system2(["-x1", "-x2"], [["1", "0"], ["0", "1"]],
                     D=DisturbanceSet("box", (0.0, 0.0), (0.2, 0.2)))

    def ends(rng, k):
        return rng.choice([-1.0, 1.0], size=(k, 1))

    def circle(rng, k):
        a = rng.uniform(0, 2 * np.pi, k)
        return np.column_stack([np.cos(a), np.sin(a)])

    pairs = [
        (decay, Certificate(cert1("x^2 - 1"), lam=-1.0, mode=Mode.EQ8), ends),
        (decay, Certificate(cert1("x^2 - 1"), lam=1.0, mode=Mode.EQ8), ends),
        (decay2, Certificate(cert2("x1^2 + x2^2 - 0.9"), lam=-0.5, mode=Mode.EQ8), circle),
    ]
    rng = np.random.default_rng(0)
    worst_rel, mismatches, statuses = 0.0, [], []
    for s, cert, boundary in pairs:
        tr = transform_lambda(cert)
        # 100 points along sampled trajectories, derivative by central differences
        x0 = s.init.sample(rng, 10)
        d = s.D.sample(rng, 10)
        X, pts, ds = x0, [], []
        for k in range(10):
            t = 0.05 + 0.09 * k
            pts.append(np.column_stack([X, np.full(10, t)]))
            ds.append(d)
            X = rk4_step(s, X, d, 0.09)
        P, Dv = np.vstack(pts), np.vstack(ds)
        h = 1e-4
        fwd = np.column_stack([rk4_step(s, P[:, :-1], Dv, h), P[:, -1] + h])
        bwd = np.column_stack([rk4_step(s, P[:, :-1], Dv, -h), P[:, -1] - h])
        fd = (tr.value(fwd) - tr.value(bwd)) / (2 * h)
        exact = tr.lie(s, P, Dv)
        worst_rel = max(worst_rel, float(np.max(np.abs(fd - exact) / np.maximum(np.abs(exact), 1e-3))))
        status = check_certificate(s, cert).status
        statuses.append(status)
        sampled = _sampled_eq5_on_transform(s, cert, rng, boundary)
        if status == "INCONCLUSIVE" or (status == "VALID") != sampled:
            mismatches.append(f"{cert.v} lambda={cert.lam}: {status} vs sampled {sampled}")
    ok = worst_rel < 1e-5 and not mismatches
    acceptance("C7", ok, f"identity max relative error {worst_rel:.2e} (< 1e-5); "
               + ("; ".join(mismatches) if mismatches else
                  f"checker verdicts {statuses} agree with sampled sign conditions on v'"))


LADDER = [(2, 1), (2, 2), (4, 3)]


def test_c8_converse_at_desk_scale(acceptance):
    start = time.perf_counter()
    problems, found = [], []
    for b in BENCHMARKS:
        s = b.problem().spec
        if b.safe:
            cert = None
            for dx, dt in LADDER:
                res = cegis_synthesize(s, Template(s.n, dx, dt))
                if res.found:
                    cert = res.certificate
                    break
            route = f"cegis{(dx, dt)}"
            if cert is None:
                vg = solve_value_function(s, Grid.for_spec(s))
                res = fit_from_value_function(s, vg, 4, 3)
                cert, route = res.certificate, "fit(4,3)"
            if cert is None:
                problems.append(f"{b.name}: no certificate")
            elif check_certificate(s, cert).status != "VALID":
                problems.append(f"{b.name}: returned certificate fails the check")
            else:
                found.append(f"{b.name}:{route}")
        else:
            for dx, dt in LADDER:
                if cegis_synthesize(s, Template(s.n, dx, dt)).found:
                    problems.append(f"{b.name}: cegis{(dx, dt)} returned a certificate")
            vg = solve_value_function(s, Grid.for_spec(s))
            if fit_from_value_function(s, vg, 4, 3).found:
                problems.append(f"{b.name}: fit returned a certificate")
            if monte_carlo_falsify(s, 100_000, seed=0) is None:
                problems.append(f"{b.name}: no falsification witness")
    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 600
    acceptance("C8", ok, f"{elapsed:.0f} s (< 600 s); "
               + ("; ".join(problems) if problems else " ".join(found) + "; unsafe instances: none found"))


def test_c9_dpp_consistency(acceptance):
    lines, ok = [], True
    for name, make, bound in (("stationary", stationary, 0.05), ("drift", drift, 0.03),
                              ("adversarial", bang, 0.05)):
        s, g = make()
        vg = solve_value_function(s, g)
        rep = check_dpp(s, vg, 2000, seed=0, tol=3 * bound)
        ok &= rep.violations == 0
        lines.append(f"{name} {rep.violations}/{rep.checked}")
    s, g = bang()
    vg = solve_value_function(s, g)
    tol = 3 * 0.05
    bad = vg.values.copy()
    j = int(np.argmin(np.abs(vg.grid.nodes()[:, 0] - 0.3)))
    k = vg.grid.K // 2
    bad[k, j] -= 10 * tol
    rep = check_dpp(s, vg.with_values(bad), 2000, seed=0, tol=tol)
    ok &= rep.violations >= 1
    acceptance("C9", ok, "violations/checked " + ", ".join(lines)
               + f"; injected node corruption flagged {rep.violations} time(s)")


def _snapshot(run):
    out = {}
    for f in sorted(run.iterdir()):
        if f.suffix == ".json" and f.name != "certificate.json":
            doc = json.loads(f.read_text())
            doc.pop("timing")
            out[f.name] = doc
        else:
            out[f.name] = f.read_bytes()
    return out


def test_c10_determinism(acceptance, tmp_path, capsys):
    names = ["s1_linear_decay", "s2_stationary", "u1_constant_drift"]
    snaps = []
    for rep in range(2):
        out = tmp_path / f"runs{rep}"
        snap = {}
        for name in names:
            path = str(PROBLEMS / f"{name}.toml")
            main(["verify-hj", path, "--out", str(out)])
            if name == "s2_stationary":
                main(["check-cert", path, "--out", str(out)])
            main(["synthesize", path, "--out", str(out), "--degree-x", "2", "--degree-t", "2"])
            main(["falsify", path, "--out", str(out), "--samples", "5000"])
            run = out / problem_hash((PROBLEMS / f"{name}.toml").read_text())[:16]
            main(["export", str(run)])
            snap[name] = _snapshot(run)
        snaps.append(snap)
    capsys.readouterr()
    same = snaps[0] == snaps[1]
    files = sum(len(v) for v in snaps[0].values())
    acceptance("C10", same, f"{files} result files compared across two runs (timing excluded): "
               + ("identical" if same else "differ"))
