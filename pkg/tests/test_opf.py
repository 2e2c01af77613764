import numpy as np
import pytest

from gridlocal.cases import four_bus_case, two_bus_case, two_bus_study_case
from gridlocal.der import DerSet
from gridlocal.errors import ValidationError
from gridlocal.opf import (Margins, OpfConfig, assemble_opf, evaluate_objective, objective_terms,
                           solve_deterministic_opf, variable_census)
from gridlocal.powerflow import InjectionState, bfs_power_flow


def _min_cost_sweep(net, avail_pu, cfg, step=1e-3):
    """Brute-force curtailment on a grid, scored with exact flows and the same costs."""
    base = net.phase_power_base
    best = (np.inf, None)
    for c in np.arange(0.0, avail_pu + step / 2, step):
        res = bfs_power_flow(net, InjectionState([avail_pu - c], [0.0]), tol=1e-12)
        loss = float(np.real(res.slack_power.sum()) + (avail_pu - c)) * base
        viol = max(abs(res.voltages.v[0]) - cfg.v_max, 0.0)
        cost = cfg.c_p * (c * base + loss) * cfg.dt + cfg.c_h * viol
        if cost < best[0]:
            best = (cost, c)
    return best[1]


def test_census_four_bus_three_periods():
    net, ders, scen, cfg = four_bus_case(hours=(11, 12, 13))
    lp, ints = assemble_opf(net, ders, scen, cfg, None, np.tile(net.root_voltage_nodes(0), (3, 1)))
    tau = int(net.tap.tap_min < net.tap.tap_max)
    assert lp.n_vars == variable_census(net, ders, 3) == 3 * (3 * 6 + 1 + tau) + 3
    assert len(ints.variables) == 3 * tau


def test_census_with_storage_and_flex():
    net, ders, scen, cfg = two_bus_study_case(n_days=1, n_test_days=0)
    day = scen.select(scen.days[:1])
    v_bar = np.tile(net.root_voltage_nodes(0), (24, 1))
    lp, ints = assemble_opf(net, ders, day, cfg, None, v_bar)
    assert lp.n_vars == variable_census(net, ders, 24) == 24 * (3 + 5 + 2 + 1) + 3
    # one shift indicator and one charge/discharge binary per period
    assert len(ints.variables) == 24 * 2


def test_zero_margins_equal_raw_limits():
    net, ders, scen, cfg = four_bus_case(hours=(12,))
    v_bar = net.root_voltage_nodes(0)[None]
    raw, _ = assemble_opf(net, ders, scen, cfg, None, v_bar)
    zero, _ = assemble_opf(net, ders, scen, cfg, Margins.zeros(1, net.n_nodes), v_bar)
    for a, b in zip(raw.arrays(), zero.arrays()):
        a = a.toarray() if hasattr(a, "toarray") else a
        b = b.toarray() if hasattr(b, "toarray") else b
        assert np.array_equal(a, b)
    tight = Margins(np.full((1, net.n_nodes), 0.01), np.zeros((1, net.n_nodes)), np.zeros((1, net.n_nodes)))
    moved, _ = assemble_opf(net, ders, scen, cfg, tight, v_bar)
    assert not np.array_equal(moved.arrays()[3], raw.arrays()[3])


def test_margin_shape_mismatch_names_family():
    net, ders, scen, cfg = four_bus_case(hours=(12,))
    bad = Margins.zeros(2, net.n_nodes)
    with pytest.raises(ValidationError, match="margin"):
        solve_deterministic_opf(net, ders, scen, cfg, bad)


def test_two_bus_curtailment_matches_sweep():
    net, ders, scen, cfg = two_bus_case(reactive=False)
    sol = solve_deterministic_opf(net, ders, scen, cfg)
    base = net.phase_power_base
    avail = sol.p_avail[0, 0] / base
    curt = avail - sol.p_g[0, 0] / base
    assert curt == pytest.approx(_min_cost_sweep(net, avail, cfg), abs=2e-3)
    assert sol.slacks["eta_v"] == pytest.approx(0.0, abs=1e-9)


def test_two_bus_prefers_reactive_power():
    net, ders, scen, cfg = two_bus_case(reactive=True)
    sol = solve_deterministic_opf(net, ders, scen, cfg)
    assert sol.p_avail[0, 0] - sol.p_g[0, 0] == pytest.approx(0.0, abs=1e-6)
    assert sol.q_g[0, 0] < -1.0
    assert np.max(np.abs(sol.voltages)) <= cfg.v_max + 1e-5


def test_no_der_equals_base_case_flow():
    net, ders, scen, cfg = four_bus_case(hours=(12, 13))
    sol = solve_deterministic_opf(net, DerSet(), scen, cfg)
    assert sol.p_g.size == 0 and all(v == 0.0 for v in sol.slacks.values())
    p, q = scen.node_loads(net)
    for t in range(2):
        ref = bfs_power_flow(net, InjectionState(-p[t] / net.phase_power_base, -q[t] / net.phase_power_base),
                             tol=1e-12)
        assert np.max(np.abs(sol.voltages[t] - ref.voltages.v)) <= 1e-8


def test_flows_are_exact():
    net, ders, scen, cfg = four_bus_case(hours=(12,))
    sol = solve_deterministic_opf(net, ders, scen, cfg)
    from gridlocal.opf import injections
    from gridlocal.powerflow import power_mismatch
    s = injections(net, ders, scen, sol.setpoints)[0]
    assert power_mismatch(net, sol.voltages[0], s, net.root_voltage_nodes(int(sol.tap[0]))) <= 1e-8


def test_raising_voltage_limit_never_costs_more():
    objs = []
    for v_max in (1.04, 1.05, 1.06):
        net, ders, scen, cfg = four_bus_case(hours=(11, 12, 13), v_max=v_max)
        objs.append(solve_deterministic_opf(net, ders, scen, cfg).objective)
    for lo, hi in zip(objs[1:], objs[:-1]):
        assert lo <= hi * (1 + 2e-3) + 1e-9


def test_objective_definitions():
    cfg = OpfConfig()
    zero = objective_terms(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(3), 1.0, cfg)
    assert sum(zero.values()) == 0.0
    curt = objective_terms(np.array([[1.0]]), np.array([[0.0]]), np.zeros((1, 1)), np.zeros(1), 1.0, cfg)
    assert curt["curtailment"] == pytest.approx(0.1)
    pen = objective_terms(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), 1.0,
                          OpfConfig(c_h=100.0), {"eta_v": 0.01})
    assert pen["penalty"] == pytest.approx(1.0)


def test_evaluate_objective_matches_milp():
    net, ders, scen, cfg = two_bus_case(reactive=True)
    sol = solve_deterministic_opf(net, ders, scen, cfg)
    assert evaluate_objective(sol, cfg) == pytest.approx(sol.milp_objective, rel=2e-2)


def test_config_invariants():
    with pytest.raises(ValidationError):
        OpfConfig(c_q=0.2, c_p=0.1)
    with pytest.raises(ValidationError):
        OpfConfig(v_min=1.1, v_max=1.05)
    with pytest.raises(ValidationError):
        OpfConfig(dt=0.0)


def test_case_study_cost_ratios():
    cfg = OpfConfig()
    assert cfg.c_p == 0.1 and cfg.c_q == pytest.approx(0.01 * cfg.c_p) and cfg.c_h == pytest.approx(1000 * cfg.c_p)


def test_solution_csv(tmp_path):
    net, ders, scen, cfg = two_bus_case(reactive=True)
    sol = solve_deterministic_opf(net, ders, scen, cfg)
    path = tmp_path / "sol.csv"
    sol.to_csv(path, "d0")
    lines = path.read_text().splitlines()
    assert lines[0] == "day,t,der,kind,p_kw,q_kvar,extra"
    assert any(line.startswith("d0,,eta_v,slack") for line in lines)
