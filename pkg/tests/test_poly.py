import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbarrier.errors import InputError, PolyParseError
from hjbarrier.intervals import poly_bounds
from hjbarrier.poly import PolyExpr, PolyVector, format_poly, parse_poly

NAMES2 = ["x1", "x2"]

coeff = st.floats(-10, 10, allow_nan=False).filter(lambda c: c != 0)
exps2 = st.tuples(st.integers(0, 4), st.integers(0, 4))
polys2 = st.lists(st.tuples(exps2, coeff), min_size=0, max_size=6).map(
    lambda items: PolyExpr(2, tuple(items)))
points2 = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


def test_canonical_form_merges_and_drops_zeros():
    p = PolyExpr.from_terms(2, [(1.0, (1, 0)), (2.0, (1, 0)), (0.0, (0, 1)), (-1.0, (2, 2)), (1.0, (2, 2))])
    assert p.terms == (((1, 0), 3.0),)


def test_rejects_negative_and_misshaped_exponents():
    with pytest.raises(InputError):
        PolyExpr(1, (((-1,), 1.0),))
    with pytest.raises(InputError):
        PolyExpr(2, (((1,), 1.0),))


def test_parse_examples():
    p = parse_poly("-0.5*x1^2*x2 + x2 - 3", NAMES2)
    assert p(np.array([2.0, 1.0])) == pytest.approx(-0.5 * 4 + 1 - 3)
    assert parse_poly("x**3", ["x1"], {"x": "x1"}) == parse_poly("x1^3", ["x1"])
    assert parse_poly("2*x1*x1", ["x1"]) == parse_poly("2 * x1^2", ["x1"])
    assert parse_poly("-x1", ["x1"])(np.array([3.0])) == -3.0
    assert parse_poly("0", ["x1"]).is_zero()
    assert parse_poly("1e-3*t", ["x1", "t"]).terms == (((0, 1), 1e-3),)


@pytest.mark.parametrize("text,column", [
    ("x1 + y", 6), ("x1 +", 5), ("x1 ^ -2", 6), ("3 $ x1", 3), ("x1 x2", 4), ("", 1),
])
def test_parse_errors_report_column(text, column):
    with pytest.raises(PolyParseError) as info:
        parse_poly(text, NAMES2)
    assert info.value.column == column


@settings(max_examples=200, deadline=None)
@given(polys2)
def test_format_parse_round_trip_is_exact(p):
    assert parse_poly(format_poly(p, NAMES2), NAMES2) == p


@settings(max_examples=100, deadline=None)
@given(polys2, polys2, points2)
def test_algebra_matches_pointwise_arithmetic(p, q, x):
    x = np.array(x)
    pv, qv = p(x), q(x)
    scale = 1 + abs(pv) + abs(qv)
    assert (p + q)(x) == pytest.approx(pv + qv, abs=1e-9 * scale)
    assert (p - q)(x) == pytest.approx(pv - qv, abs=1e-9 * scale)
    assert (p * q)(x) == pytest.approx(pv * qv, rel=1e-9, abs=1e-9 * scale ** 2)
    assert (p ** 2)(x) == pytest.approx(pv ** 2, rel=1e-9, abs=1e-9 * scale ** 2)


@settings(max_examples=100, deadline=None)
@given(polys2, points2)
def test_derivative_matches_central_difference(p, x):
    x = np.array(x)
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1e-5
        fd = (p(x + e) - p(x - e)) / 2e-5
        assert p.diff(i)(x) == pytest.approx(fd, rel=1e-5, abs=1e-4)


def test_substitute_extend_restrict():
    p = parse_poly("x1^2*t + 3*t^2 - 1", ["x1", "t"])
    q = p.substitute(1, 2.0)
    assert q == parse_poly("2*x1^2 + 11", ["x1", "t"])
    assert p.depends_on(1) and not q.depends_on(1)
    r = parse_poly("x1 + 1", ["x1"])
    assert r.extend(2).restrict(1) == r
    with pytest.raises(InputError):
        p.restrict(1)


def test_batch_and_vector_evaluation_agree():
    p = parse_poly("x1^2 - x1*x2 + 2", NAMES2)
    q = parse_poly("x2^3", NAMES2)
    X = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    V = PolyVector([p, q])(X)
    np.testing.assert_allclose(V[:, 0], p(X))
    np.testing.assert_allclose(V[:, 1], q(X))


# interval enclosures -------------------------------------------------------


def test_interval_examples():
    x = parse_poly("x1", ["x1"])
    lo, hi = (x * x).bounds(np.array([[-1.0]]), np.array([[2.0]]))
    assert lo[0] <= 0 and hi[0] >= 4
    lo, hi = (x * x - x).bounds(np.array([[0.0]]), np.array([[1.0]]))
    assert -1 <= lo[0] <= -0.25 and 0 <= hi[0] <= 1
    lo, hi = PolyExpr.constant(1, 3.0).bounds(np.array([[-5.0]]), np.array([[7.0]]))
    assert lo[0] == hi[0] == 3.0


@settings(max_examples=1000, deadline=None)
@given(polys2, st.tuples(st.floats(-2, 2), st.floats(-2, 2)), st.tuples(st.floats(0, 2), st.floats(0, 2)))
def test_interval_enclosure_contains_sampled_range(p, a, w):
    lo = np.array(a)
    hi = lo + np.array(w)
    blo, bhi = p.bounds(lo[None, :], hi[None, :])
    u = np.random.default_rng(1).random((200, 2))
    corners = np.array([[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]])
    X = np.vstack([lo + u * (hi - lo), corners])
    vals = p(X)
    slack = 1e-9 * (1 + np.abs(vals).max())
    assert blo[0] <= vals.min() + slack
    assert bhi[0] >= vals.max() - slack


def test_per_box_coefficients():
    exps = np.array([[2], [0]])
    coeffs = np.array([[1.0, -1.0], [2.0, 0.0]])
    lo, hi = poly_bounds(coeffs, exps, np.array([[0.0], [0.0]]), np.array([[1.0], [1.0]]))
    np.testing.assert_allclose(lo, [-1.0, 0.0])
    np.testing.assert_allclose(hi, [0.0, 2.0])


def test_odd_power_and_zero_crossing():
    x = parse_poly("x1^3", ["x1"])
    lo, hi = x.bounds(np.array([[-2.0]]), np.array([[1.0]]))
    assert (lo[0], hi[0]) == (-8.0, 1.0)
    assert math.isclose(parse_poly("x1^2", ["x1"]).bounds(np.array([[-3.0]]), np.array([[-1.0]]))[0][0], 1.0)
