import csv

import numpy as np
import pytest

from hjbarrier.certificate import Certificate, check_certificate
from hjbarrier.errors import DomainError, InputError, NumericError
from hjbarrier.hj import Grid, solve_value_function
from hjbarrier.simulate import (DisturbanceSignal, integrate, monte_carlo_falsify, time_lattice,
                                worst_case_replay)

from _systems import cert1, system1


def test_constant_field_final_state():
    s = system1(f1="1", f2="0", x0=(-0.1, 0.1))
    tr = integrate(s, [0.0], DisturbanceSignal.constant([0.0]), dt=0.01)
    assert tr.final_state[0] == pytest.approx(1.0, abs=1e-9)
    assert tr.times[0] == 0.0 and tr.states[0, 0] == 0.0


def test_exponential_decay_final_state():
    s = system1(f1="-x", f2="0")
    tr = integrate(s, [1.0], DisturbanceSignal.constant([0.0]), dt=0.01)
    assert tr.final_state[0] == pytest.approx(np.exp(-1.0), abs=1e-8)


def test_exit_time_within_one_step():
    s = system1(f1="1", f2="0", h="x - 1", x0=(0.0, 0.1))
    dt = 0.01
    tr = integrate(s, [0.5], DisturbanceSignal.constant([0.0]), dt=dt)
    assert abs(tr.exit_time - 0.5) <= dt
    first = np.nonzero(tr.h_values >= 0)[0][0]
    assert tr.times[first] == tr.exit_time


def test_rk4_fourth_order():
    s = system1(f1="-x", f2="0")
    errs = []
    for dt in (0.1, 0.05, 0.025):
        tr = integrate(s, [1.0], DisturbanceSignal.constant([0.0]), dt=dt)
        errs.append(abs(tr.final_state[0] - np.exp(-1.0)))
    for a, b in zip(errs, errs[1:]):
        assert 12 < a / b < 20


def test_switch_times_are_mesh_points():
    s = system1(f1="0", f2="1", D=(0.0, 1.0))
    sig = DisturbanceSignal("bang_bang", (0.0, 0.333), ((1.0,), (-1.0,)))
    tr = integrate(s, [0.0], sig, dt=0.1)
    assert 0.333 in tr.times
    # exact for piecewise-constant drift: x(1) = 0.333 - 0.667
    assert tr.final_state[0] == pytest.approx(0.333 - 0.667, abs=1e-12)


def test_signal_validation():
    with pytest.raises(InputError):
        DisturbanceSignal("constant", (0.1,), ((0.0,),))
    with pytest.raises(InputError):
        DisturbanceSignal("piecewise_constant", (0.0, 0.5, 0.5), ((0.0,), (0.1,), (0.2,)))
    with pytest.raises(InputError):
        DisturbanceSignal("wiggly", (0.0,), ((0.0,),))
    s = system1(f1="0", f2="1", D=(0.0, 1.0))
    with pytest.raises(DomainError):
        integrate(s, [0.0], DisturbanceSignal.constant([1.5]))
    with pytest.raises(DomainError):
        integrate(s, [0.0], DisturbanceSignal("bang_bang", (0.0,), ((0.5,),)))
    with pytest.raises(InputError):
        integrate(s, [np.nan], DisturbanceSignal.constant([0.0]))


def test_non_finite_state_is_reported():
    s = system1(f1="x^2", f2="0", clamp=(-1e200, 1e200), enclosing=(-2.0, 2.0))
    with pytest.raises(NumericError):
        integrate(s, [1e150], DisturbanceSignal.constant([0.0]), dt=0.1)


def test_time_lattice():
    t = time_lattice(1.0, 0.3)
    assert t[0] == 0.0 and t[-1] == 1.0 and np.all(np.diff(t) > 0)
    assert len(time_lattice(1.0, 0.01)) == 101


def test_trajectory_csv(tmp_path):
    s = system1(f1="-x", f2="1", D=(0.0, 0.1))
    tr = integrate(s, [0.2], DisturbanceSignal.constant([0.1]), dt=0.1)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x1", "d1", "h"]
    assert len(rows) == len(tr.times) + 1
    assert float(rows[-1][0]) == 1.0 and float(rows[1][2]) == 0.1


# Monte Carlo -----------------------------------------------------------------


def test_falsify_drift_finds_witness():
    s = system1(f1="1", f2="0", x0=(0.4, 0.6))
    tr = monte_carlo_falsify(s, 100, seed=0)
    assert tr is not None and tr.exit_time <= 0.6 + 1e-3


def test_falsify_stationary_finds_nothing():
    s = system1(f1="0", f2="0", x0=(-0.5, 0.5))
    assert monte_carlo_falsify(s, 500, seed=0) is None


def test_falsify_pure_disturbance_uses_extreme_constant():
    s = system1(f1="0", f2="1", D=(0.0, 1.0), x0=(0.0, 0.0), T=2.0)
    tr = monte_carlo_falsify(s, 10, seed=3)
    assert tr is not None
    assert tr.signal.kind == "constant" and abs(tr.signal.values[0][0]) == 1.0
    assert tr.exit_time == pytest.approx(1.0, abs=0.01)


def test_falsify_is_deterministic():
    s = system1(f1="0", f2="1", D=(0.0, 1.0), x0=(-0.1, 0.1), T=1.0)
    a = monte_carlo_falsify(s, 5000, seed=7)
    b = monte_carlo_falsify(s, 5000, seed=7)
    assert (a is None) == (b is None)
    if a is not None:
        np.testing.assert_array_equal(a.states, b.states)


def test_valid_certificate_has_no_monte_carlo_exit():
    s = system1(f1="-x", f2="1", D=(0.0, 0.1), x0=(-0.2, 0.2))
    cert = Certificate(cert1("x^2 - 0.01*t - 0.9"))
    assert check_certificate(s, cert).status == "VALID"
    assert monte_carlo_falsify(s, 10_000, seed=1) is None


# worst-case replay -----------------------------------------------------------


def test_replay_pure_disturbance_exits_near_one():
    s = system1(f1="0", f2="1", D=(0.0, 1.0), x0=(-0.1, 0.1), T=2.0)
    vg = solve_value_function(s, Grid.for_spec(s))
    tr = worst_case_replay(s, [0.0], vg)
    assert tr.exit_time == pytest.approx(1.0, abs=0.05)
    assert np.all(np.diff(np.abs(tr.states[:, 0])) >= -1e-12)


def test_replay_without_disturbance_matches_integrate():
    s = system1(f1="-x", f2="1", D=(0.0, 0.0), x0=(-0.2, 0.2))
    vg = solve_value_function(s, Grid.for_spec(s))
    a = worst_case_replay(s, [0.2], vg)
    b = integrate(s, [0.2], DisturbanceSignal.constant([0.0]))
    np.testing.assert_allclose(a.states, b.states, rtol=0, atol=1e-14)


def test_replay_decay_stays_inside():
    s = system1(f1="-x", f2="1", D=(0.0, 0.1), x0=(-0.2, 0.2), T=5.0)
    vg = solve_value_function(s, Grid.for_spec(s))
    tr = worst_case_replay(s, [0.2], vg)
    assert tr.exit_time is None
    assert np.max(np.abs(tr.states)) <= 0.28


def test_replay_outside_grid_is_domain_error():
    s = system1(f1="0", f2="1", D=(0.0, 1.0), x0=(-0.1, 0.1))
    vg = solve_value_function(s, Grid.for_spec(s, nodes=21))
    with pytest.raises(DomainError):
        worst_case_replay(s, [5.0], vg)
