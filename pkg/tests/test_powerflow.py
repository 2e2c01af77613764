import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridlocal.cases import random_radial_network
from gridlocal.errors import PowerFlowError, ValidationError
from gridlocal.powerflow import (ROTATION, VUF_MAX_DEFAULT, InjectionState, VoltageState, bfs_power_flow,
                                 bus_vuf, linearized_sweep, phase_losses, power_mismatch, symmetrical_vuf)

from conftest import random_injections


def _scalar_fixed_point(z, s, v=1.0 + 0j):
    for _ in range(10_000):
        nxt = 1.0 + z * np.conj(s / v)
        if abs(nxt - v) < 1e-15:
            return nxt
        v = nxt
    raise AssertionError("scalar iteration did not settle")


def _fortescue(v_abc):
    a = np.exp(2j * np.pi / 3)
    m = np.array([[1, 1, 1], [1, a, a * a], [1, a * a, a]]) / 3
    return m @ np.asarray(v_abc)


def test_zero_injection_gives_slack_voltage(four_bus):
    res = bfs_power_flow(four_bus, InjectionState.zeros(four_bus))
    assert np.array_equal(res.voltages.v, four_bus.root_voltage_nodes(0))
    assert np.all(res.branch_currents == 0)


def test_two_bus_matches_scalar_fixed_point():
    from gridlocal.cases import two_bus_network
    net = two_bus_network(0.05 + 0.02j)
    s = -(0.1 + 0.03j)
    res = bfs_power_flow(net, InjectionState([s.real], [s.imag]), tol=1e-14, max_iter=500)
    assert abs(res.voltages.v[0] - _scalar_fixed_point(0.05 + 0.02j, s)) < 1e-10


def test_random_six_bus_mismatch(rng):
    net = random_radial_network(rng, 6)
    p, q = random_injections(rng, net)
    res = bfs_power_flow(net, InjectionState(p, q), tol=1e-12, max_iter=200)
    assert res.converged
    assert res.mismatch <= 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_result_independent_of_initial_guess(seed):
    rng = np.random.default_rng(seed)
    net = random_radial_network(rng, int(rng.integers(4, 9)), three_phase=bool(rng.integers(0, 2)))
    p, q = random_injections(rng, net)
    inj = InjectionState(p, q)
    flat = bfs_power_flow(net, inj, tol=1e-12, max_iter=300)
    v0 = flat.voltages.v * (1 + 0.05 * rng.uniform(-1, 1, net.n_nodes)) * np.exp(0.05j * rng.uniform(-1, 1, net.n_nodes))
    pert = bfs_power_flow(net, inj, tol=1e-12, max_iter=300, v0=v0)
    assert np.max(np.abs(flat.voltages.v - pert.voltages.v)) <= 1e-8


def test_nonconvergence_reports_mismatch(four_bus):
    p = np.full(four_bus.n_nodes, -0.5)
    with pytest.raises(PowerFlowError) as err:
        bfs_power_flow(four_bus, InjectionState(p, 0.3 * p), max_iter=2)
    assert np.isfinite(err.value.mismatch) and err.value.iterations == 2


def test_voltage_collapse_detected(two_bus):
    with pytest.raises(PowerFlowError, match="collapse|converge"):
        bfs_power_flow(two_bus, InjectionState([-40.0], [-40.0]), max_iter=100)


def test_tap_shifts_slack(four_bus):
    from gridlocal.cases import cigre19_network
    net = cigre19_network(1.03)
    res = bfs_power_flow(net, InjectionState.zeros(net), tap=0)
    assert np.allclose(np.abs(res.voltages.v), 1.03)


def test_linearized_sweep_fixed_point(four_bus, rng):
    p, q = random_injections(rng, four_bus)
    inj = InjectionState(p, q)
    exact = bfs_power_flow(four_bus, inj, tol=1e-13, max_iter=300)
    lin = linearized_sweep(four_bus, inj, exact.voltages)
    assert np.allclose(lin.voltages.v, exact.voltages.v, atol=1e-12)


def test_linearized_sweep_from_flat_is_first_iterate(four_bus, rng):
    p, q = random_injections(rng, four_bus)
    inj = InjectionState(p, q)
    lin = linearized_sweep(four_bus, inj, VoltageState.flat(four_bus))
    one = bfs_power_flow(four_bus, inj, max_iter=1, raise_on_fail=False)
    assert np.allclose(lin.voltages.v, one.voltages.v, atol=1e-14)


def test_linearized_sweep_superposition(four_bus, rng):
    v_bar = VoltageState.flat(four_bus)
    root = four_bus.root_voltage_nodes(0)
    for _ in range(5):
        s1, s2 = random_injections(rng, four_bus), random_injections(rng, four_bus)
        a, b = rng.normal(size=2)
        drop = lambda p, q: linearized_sweep(four_bus, InjectionState(p, q), v_bar).voltages.v - root
        combo = drop(a * s1[0] + b * s2[0], a * s1[1] + b * s2[1])
        assert np.allclose(combo, a * drop(*s1) + b * drop(*s2), atol=1e-13)


def test_linearized_sweep_rejects_zero_voltage(four_bus):
    with pytest.raises(ValidationError):
        VoltageState(np.zeros(four_bus.n_nodes))


def test_vuf_balanced_is_zero():
    vuf, vneg = symmetrical_vuf(np.conj(ROTATION))
    assert vuf == pytest.approx(0.0, abs=1e-12) and vneg == pytest.approx(0.0, abs=1e-12)


def test_vuf_matches_fortescue_oracle():
    v = np.array([1.05, 0.95 * np.exp(-2j * np.pi / 3), 1.00 * np.exp(1j * np.radians(118))])
    _, vp, vn = _fortescue(v)
    vuf, vneg = symmetrical_vuf(v)
    assert vneg == pytest.approx(abs(vn), abs=1e-14)
    assert vuf == pytest.approx(100 * abs(vn) / abs(vp), abs=1e-12)
    assert VUF_MAX_DEFAULT == 2.0


def test_vuf_undefined_without_positive_sequence():
    vuf, vneg = symmetrical_vuf(np.array([1.0, 1.0, 1.0]) * 1e-8)
    assert np.isnan(vuf) and vneg == pytest.approx(0.0)


def test_phase_losses_hand_oracle():
    from gridlocal.cases import two_bus_network
    net = two_bus_network(0.05 + 0.02j)
    s = -(0.1 + 0.03j)
    res = bfs_power_flow(net, InjectionState([s.real], [s.imag]), tol=1e-14, max_iter=500)
    v2 = res.voltages.v[0]
    i = np.conj(s / v2)  # towards the slack
    expected = abs(np.real(1.0 * np.conj(-i) - v2 * np.conj(-i)))
    assert phase_losses(res)[0] == pytest.approx(expected, abs=1e-14)
    assert phase_losses(bfs_power_flow(net, InjectionState.zeros(net)))[0] == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_losses_equal_energy_balance(seed):
    rng = np.random.default_rng(seed)
    net = random_radial_network(rng, int(rng.integers(4, 9)))
    p, q = random_injections(rng, net)
    res = bfs_power_flow(net, InjectionState(p, q), tol=1e-13, max_iter=300)
    total = np.sum(phase_losses(res, signed=True))
    balance = np.sum(res.slack_power.real) + np.sum(p)
    assert total == pytest.approx(balance, abs=1e-8)
    assert np.all(phase_losses(res, signed=True) >= -1e-12)


def test_balanced_network_gives_rotated_phases(four_bus):
    p = np.tile([-0.03], four_bus.n_nodes)
    res = bfs_power_flow(four_bus, InjectionState(p, p / 3), tol=1e-13, max_iter=300)
    v = res.voltages.v
    for bus in (1, 2, 3):
        va, vb, vc = (v[four_bus.node(bus, ph)] for ph in "abc")
        assert vb == pytest.approx(va * np.exp(-2j * np.pi / 3), abs=1e-10)
        assert vc == pytest.approx(va * np.exp(2j * np.pi / 3), abs=1e-10)


def test_bus_vuf_shape(four_bus):
    v = four_bus.root_voltage_nodes(0)
    assert bus_vuf(four_bus, v).shape == (3,)
    assert np.allclose(bus_vuf(four_bus, v), 0.0, atol=1e-12)


def test_power_mismatch_zero_at_solution(four_bus, rng):
    p, q = random_injections(rng, four_bus)
    res = bfs_power_flow(four_bus, InjectionState(p, q), tol=1e-13, max_iter=300)
    assert power_mismatch(four_bus, res.voltages.v, p + 1j * q, four_bus.root_voltage_nodes(0)) < 1e-10


def test_flow_csv_dump(tmp_path, four_bus):
    res = bfs_power_flow(four_bus, InjectionState.zeros(four_bus))
    path = tmp_path / "flow.csv"
    res.to_csv(path, four_bus)
    lines = path.read_text().splitlines()
    assert lines[0] == "bus,phase,v_pu,angle_deg,loading_pct" and len(lines) == four_bus.n_nodes + 1
