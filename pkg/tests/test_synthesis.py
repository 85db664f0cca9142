import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjbarrier.benchmarks import get_benchmark
from hjbarrier.certificate import Certificate, Mode, check_certificate, lie_derivative
from hjbarrier.errors import InputError
from hjbarrier.hj import Grid, solve_value_function
from hjbarrier.poly import PolyExpr
from hjbarrier.synthesis import (COEFF_BOUND, LinearFeasibilityProblem, SamplePoints, Template,
                                 build_constraints, cegis_synthesize, fit_from_value_function,
                                 initial_samples, shift_certificate, solve_feasibility)

from _systems import system1


def points(initial=(), boundary=(), lie=(), lie_d=(), region=()):
    def arr(v, k):
        return np.asarray(v, float).reshape(-1, k)
    return SamplePoints(arr(initial, 1), arr(boundary, 2), arr(region, 2), arr(lie, 2), arr(lie_d, 1))


def test_template_basis():
    tmpl = Template(1, 2, 1)
    assert tmpl.exponents == [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]
    assert len(set(tmpl.exponents)) == tmpl.size
    assert Template(2, 2, 0).size == 6
    p = tmpl.polynomial([1, 0, 0, 0, -2, 0])
    assert p(np.array([3.0, 0.7])) == pytest.approx(1 - 18)
    with pytest.raises(InputError):
        tmpl.polynomial([1.0])
    with pytest.raises(InputError):
        Template(1, -1, 0)


def test_build_constraints_examples():
    s = system1(f1="0", f2="0")
    pts = points(initial=[0.2], boundary=[[1.0, 0.5]], lie=[[0.3, 0.4]], lie_d=[[0.0]])
    margin = 1e-3

    lfp = build_constraints(s, Template(1, 0, 0), pts, margin)
    row = lfp.kinds.index("initial")
    assert lfp.A[row].tolist() == [1.0] and lfp.b[row] == -margin

    lfp = build_constraints(s, Template(1, 0, 1), pts, margin)
    row = lfp.kinds.index("lie")
    assert lfp.A[row].tolist() == [0.0, 1.0] and lfp.b[row] == -margin

    lfp = build_constraints(s, Template(1, 2, 0), pts, margin)
    row = lfp.kinds.index("boundary")
    assert lfp.A[row].tolist() == [-1.0, -1.0, -1.0] and lfp.b[row] == 0.0

    lfp = build_constraints(s, Template(1, 2, 0), points(initial=[0.2], region=[[0.5, 0.1]],
                                                         lie=[[0.3, 0.4]], lie_d=[[0.0]]),
                            margin, Mode.EQ7)
    row = lfp.kinds.index("obstacle")
    # h - v <= -margin at x = 0.5, i.e. -(1 + 0.5 c1 + 0.25 c2) <= -margin - h(0.5)
    assert lfp.A[row].tolist() == [-1.0, -0.5, -0.25]
    assert lfp.b[row] == pytest.approx(-margin + 0.75)


def test_build_constraints_lambda_and_dynamics():
    s = system1(f1="-x", f2="1", D=(0.0, 0.1))
    pts = points(initial=[0.0], boundary=[[1.0, 0.0]], lie=[[0.5, 0.2]], lie_d=[[0.1]])
    lfp = build_constraints(s, Template(1, 2, 1), pts, 0.0, Mode.EQ8, lam=2.0)
    row = lfp.A[lfp.kinds.index("lie")]
    tmpl = Template(1, 2, 1)
    for j, mono in enumerate(tmpl.basis()):
        lv = lie_derivative(s, mono, [0.1])
        expected = lv(np.array([0.5, 0.2])) - 2.0 * mono(np.array([0.5, 0.2]))
        assert row[j] == pytest.approx(float(expected), abs=1e-14)


def test_build_constraints_empty_samples():
    s = system1(f1="0", f2="0")
    with pytest.raises(InputError, match="empty"):
        build_constraints(s, Template(1, 2, 0), points(boundary=[[1.0, 0.0]], lie=[[0.0, 0.0]],
                                                       lie_d=[[0.0]]), 0.0)
    with pytest.raises(InputError, match="empty"):
        build_constraints(s, Template(1, 2, 0), points(initial=[0.0], lie=[[0.0, 0.0]], lie_d=[[0.0]]),
                          0.0, Mode.EQ7)


def test_solve_feasibility_examples():
    r = solve_feasibility(LinearFeasibilityProblem(np.array([[1.0], [-1.0]]), np.array([-1.0, 2.0])))
    assert r.coeffs[0] == pytest.approx(-1.5) and r.slack == pytest.approx(0.5)

    r = solve_feasibility(LinearFeasibilityProblem(np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0])))
    assert r.coeffs is None and "infeasible" in r.message

    A = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 0.0]])
    b = np.array([0.0, 0.0, -1.0])
    r = solve_feasibility(LinearFeasibilityProblem(A, b))
    # c0 >= 1 together with c0 <= -|c1| has no solution
    assert r.coeffs is None

    A = np.array([[-1.0, 1.0], [-1.0, -1.0], [1.0, 0.0]])
    b = np.array([0.0, 0.0, 1.0])
    r = solve_feasibility(LinearFeasibilityProblem(A, b))
    assert r.coeffs is not None and np.all(A @ r.coeffs <= b + 1e-9)


def test_solve_feasibility_bounds_and_degenerate_rows():
    r = solve_feasibility(LinearFeasibilityProblem(np.array([[-1.0]]), np.array([-5e3])))
    assert r.coeffs is None
    r = solve_feasibility(LinearFeasibilityProblem(np.array([[1.0]]), np.array([np.nan])))
    assert r.coeffs is None and "non-finite" in r.message
    r = solve_feasibility(LinearFeasibilityProblem(np.array([[1.0], [-1.0]]), np.array([0.0, 0.0]),
                                                   slack_cap=1.0))
    assert r.coeffs is not None and abs(r.coeffs[0]) <= COEFF_BOUND


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=8))
def test_solve_feasibility_returns_feasible_points(rows):
    A = np.array([[a, b] for a, b, _ in rows])
    b = np.array([c for *_, c in rows])
    r = solve_feasibility(LinearFeasibilityProblem(A, b, slack_cap=10.0))
    if r.coeffs is not None:
        assert np.all(A @ r.coeffs <= b + 1e-7)
        assert np.all(np.abs(r.coeffs) <= COEFF_BOUND + 1e-9)


def test_initial_samples_cover_conditions():
    s = get_benchmark("s3_rotation").problem().spec
    pts = initial_samples(s, Mode.EQ5)
    assert pts.initial.shape[0] >= 200 and pts.boundary.shape[0] >= 200
    assert np.all(np.abs(s.safe.h(pts.boundary[:, :2])) <= 1e-10)
    assert np.all(s.safe.h(pts.lie[:, :2]) <= 1e-10)
    assert np.all((pts.lie[:, 2] >= 0) & (pts.lie[:, 2] <= s.T))
    again = initial_samples(s, Mode.EQ5)
    np.testing.assert_array_equal(pts.lie, again.lie)
    eq7 = initial_samples(s, Mode.EQ7)
    assert eq7.boundary.shape[0] == 0 and eq7.region.shape[0] > 0


# ---------------------------------------------------------------------------
# CEGIS


def test_cegis_stationary():
    s = system1(f1="0", f2="0")
    res = cegis_synthesize(s, Template(1, 2, 1))
    assert res.found
    assert check_certificate(s, res.certificate).status == "VALID"
    assert res.provenance["route"] == "cegis"


def test_cegis_unsafe_is_absent():
    s = get_benchmark("u1_constant_drift").problem().spec
    res = cegis_synthesize(s, Template(1, 2, 1), max_iters=10)
    assert not res.found and "reason" in res.diagnostics


def test_cegis_decay_degree_two():
    s = system1(f1="-x", f2="1", D=(0.0, 0.1), x0=(-0.2, 0.2))
    res = cegis_synthesize(s, Template(1, 2, 2))
    assert res.found
    assert check_certificate(s, res.certificate).status == "VALID"
    hist = res.provenance["history"]
    sizes = [h["samples"] for h in hist]
    assert all(b > a for a, b in zip(sizes, sizes[1:]))
    for h in hist[:-1]:
        for ce in h.get("counterexamples", []):
            assert ce["value"] > 1e-6


@pytest.mark.parametrize("mode,lam", [(Mode.EQ7, 0.0), (Mode.EQ8, -1.0)])
def test_cegis_other_modes(mode, lam):
    s = system1(f1="-x", f2="1", D=(0.0, 0.1), x0=(-0.2, 0.2))
    res = cegis_synthesize(s, Template(1, 2, 1), mode=mode, lam=lam)
    assert res.found and res.certificate.mode is mode
    assert check_certificate(s, res.certificate).status == "VALID"


def test_cegis_rejects_static_mode():
    with pytest.raises(InputError):
        cegis_synthesize(system1(f1="0", f2="0"), Template(1, 2, 0), mode=Mode.EQ3_STATIC)


def test_cegis_progress_on_benchmark_2d():
    s = get_benchmark("s3_rotation").problem().spec
    res = cegis_synthesize(s, Template(2, 2, 1))
    assert res.found
    sizes = [h["samples"] for h in res.provenance["history"]]
    assert sizes == sorted(set(sizes))


# ---------------------------------------------------------------------------
# fit from the value function


@settings(max_examples=50, deadline=None)
@given(coeffs=st.lists(st.floats(-4, 4), min_size=6, max_size=6), eps=st.floats(0, 1),
       T=st.floats(0.1, 5))
def test_shift_identity(coeffs, eps, T):
    s = system1(f1="-x^3 + 1", f2="x", D=(0.2, 0.3))
    w = Template(1, 2, 1).polynomial(coeffs)
    shifted = shift_certificate(w, eps, T)
    assert shifted.extend(2) == (w + PolyExpr.variable(2, 1) * (-2 * eps) + 2 * (T + 1) * eps)
    for d in ([-0.1], [0.5]):
        diff = lie_derivative(s, shifted, d) - (lie_derivative(s, w, d) - 2 * eps)
        assert all(abs(c) <= 1e-12 * (1 + eps) for _, c in diff.terms)
    x = np.linspace(-1, 1, 7)
    at0 = np.column_stack([x, np.zeros_like(x)])
    np.testing.assert_allclose(shifted(at0), w(at0) + 2 * (T + 1) * eps, atol=1e-12)


def test_fit_stationary_exact():
    s = system1(f1="0", f2="0")
    vg = solve_value_function(s, Grid.for_spec(s, nodes=101))
    res = fit_from_value_function(s, vg, 2, 1)
    assert res.found
    assert res.provenance["fit_residual"] < 1e-9 and res.provenance["eps_hat"] < 1e-9
    assert res.certificate.mode is Mode.EQ7
    assert check_certificate(s, res.certificate).status == "VALID"


def test_fit_decay_reports_outcome():
    s = get_benchmark("s1_linear_decay").problem().spec
    vg = solve_value_function(s, Grid.for_spec(s))
    res = fit_from_value_function(s, vg, 4, 3)
    prov = res.provenance
    assert {"fit_residual", "lie_max", "eps_hat", "delta_hat", "eps_threshold"} <= prov.keys()
    assert prov["eps_hat"] >= max(prov["fit_residual"], prov["lie_max"])
    if res.found:
        assert check_certificate(s, res.certificate).status == "VALID"
    else:
        assert res.diagnostics["failed_conditions"]
    assert res.found


def test_fit_unsafe_and_missing_grid():
    s = get_benchmark("u1_constant_drift").problem().spec
    vg = solve_value_function(s, Grid.for_spec(s))
    res = fit_from_value_function(s, vg, 4, 3)
    assert not res.found and "not believed safe" in res.diagnostics["reason"]
    with pytest.raises(InputError):
        fit_from_value_function(s, None, 2, 1)


def test_synthesized_certificates_checked_independently():
    s = system1(f1="-x", f2="1", D=(0.0, 0.1), x0=(-0.2, 0.2))
    res = cegis_synthesize(s, Template(1, 2, 1))
    fresh = Certificate(res.certificate.v, res.certificate.lam, res.certificate.mode)
    assert check_certificate(s, fresh, tol=1e-6).status == "VALID"
