"""Built-in test feeders and study cases.

* :func:`two_bus_case` - single-phase PV at the end of one line, engineered
  to overshoot the voltage limit.
* :func:`two_bus_study_case` - the same feeder over several synthetic days
  with a battery and a flexible load.
* :func:`four_bus_case` - short three-phase feeder with PV at two buses.
* :func:`cigre19_case` - synthetic feeder following the topology of the
  CIGRE European LV residential benchmark (node ``k`` is benchmark ``R(k-1)``).
* :func:`random_radial_network` - random trees for property tests.
"""
from __future__ import annotations

import math

import numpy as np

from .der import Bess, DerSet, FlexLoad, PvUnit
from .network import BranchSpec, Bus, Grounding, NetworkModel, TapChanger
from .opf import OpfConfig
from .scenario import (LoadSpec, ScenarioSet, SyntheticSpec, clear_sky_shape,
                       generate_synthetic_scenarios)

# Cable data (Ω/km): phase resistance and reactance of the CIGRE LV cables
UG1 = (0.162, 0.0832)
UG3 = (0.822, 0.0847)


def cable_matrix(r, x, mutual_ratio=0.4, neutral_r=None):
    """4x4 primitive impedance (Ω/km) of a four-core cable.

    Self terms ``r + jx`` on the phases, ``neutral_r + jx`` on the neutral,
    and purely reactive coupling ``j * mutual_ratio * x`` between conductors.
    """
    neutral_r = r if neutral_r is None else neutral_r
    z = np.full((4, 4), 1j * mutual_ratio * x)
    np.fill_diagonal(z, [r + 1j * x] * 3 + [neutral_r + 1j * x])
    return z


def transformer_matrix(s_kva, v_ll, vk=0.04, vkr=0.01):
    """3x3 series impedance (Ω) of a Dyn transformer referred to the LV side."""
    z_base = v_ll ** 2 / (s_kva * 1e3)
    z = (vkr + 1j * math.sqrt(vk ** 2 - vkr ** 2)) * z_base
    return np.eye(3) * z


def two_bus_network(z_pu=0.05 + 0.02j, phases=("a",), ampacity=1000.0, base_power=100.0,
                    base_voltage=400.0):
    z_base = base_voltage ** 2 / (base_power * 1e3)
    z = np.eye(3) * z_pu * z_base
    buses = [Bus(0, kind="slack"), Bus(1, phases=phases)]
    return NetworkModel.build(buses, [BranchSpec(0, 1, z, 1.0, ampacity, "line")],
                              base_power=base_power, base_voltage=base_voltage)


def two_bus_case(reactive=True, p_avail_kw=None, z_pu=0.05 + 0.1j, v_max=1.05):
    """PV at the remote bus whose full output overshoots ``v_max`` by about 0.02 pu.

    ``reactive=False`` pins the inverter's reactive power to zero.
    """
    net = two_bus_network(z_pu)
    base = net.phase_power_base
    if p_avail_kw is None:
        p_avail_kw = 1.8 * base
    if reactive:
        pv = PvUnit("pv1", 1, "a", 2.1 * base, "pv1", pf_min=0.9, q_mode="cone")
    else:
        pv = PvUnit("pv1", 1, "a", 2.1 * base, "pv1", pf_min=0.9, q_mode="box", q_min=0.0, q_max=0.0)
    scen = ScenarioSet(1.0, 1, ("d0",), {"pv1": [p_avail_kw], "load1": [0.0]},
                       (LoadSpec("load1", 1, "a", "load1"),))
    cfg = OpfConfig(v_max=v_max, horizon=1)
    return net, DerSet(pv=(pv,)), scen, cfg


def two_bus_study_case(n_days=6, n_test_days=2, seed=3, pv_ratio=1.8, load_kw=10.0):
    """Multi-day version of the 2-bus feeder with PV, a battery and a flexible load.

    Midday PV at ``pv_ratio`` times the phase base overshoots 1.05 pu when
    unmanaged, so every control method has something to do.
    """
    net = two_bus_network(0.05 + 0.1j)
    base = net.phase_power_base
    pv = PvUnit("pv1", 1, "a", pv_ratio * base / 0.9 * 1.05, "pv1", pf_min=0.9)
    e_cap = 0.25 * base
    bess = Bess("bess1", 1, "a", e_cap, e_cap / 2.0, e_cap / 2.0, 0.5 * e_cap)
    flex = FlexLoad("flex1", 1, "a", 2.0, "flex1")
    spec = SyntheticSpec({"load1": load_kw}, {"pv1": pv_ratio * base}, n_days=n_days, n_test_days=n_test_days)
    scen = generate_synthetic_scenarios(spec, (LoadSpec("load1", 1, "a", "load1"),), seed)
    series = dict(scen.series)
    series["flex1"] = np.full(scen.horizon, flex.p_shift)
    scen = ScenarioSet(scen.dt, scen.periods_per_day, scen.days, series, scen.loads, scen.split)
    cfg = OpfConfig(c_p=0.1, c_q=0.001, c_h=100.0, v_max=1.05, horizon=scen.periods_per_day)
    return net, DerSet((pv,), (bess,), (flex,)), scen, cfg


def four_bus_network(length_km=0.25, ampacity=300.0):
    buses = [Bus(0, kind="slack"), Bus(1), Bus(2), Bus(3)]
    z = cable_matrix(*UG1)
    branches = [BranchSpec(0, 1, z, length_km, ampacity, "l01"),
                BranchSpec(1, 2, z, length_km, ampacity, "l12"),
                BranchSpec(2, 3, z, length_km, ampacity, "l23")]
    return NetworkModel.build(buses, branches, grounding=Grounding())


def four_bus_case(hours=(9, 10, 11, 12, 13, 14, 15), pv_kw=(45.0, 60.0), load_kw=6.0, v_max=1.05,
                  pv_phases="abc"):
    """Three-phase 4-bus feeder with PV at buses 2 and 3.

    ``pv_kw`` is the peak output per bus, split evenly over ``pv_phases``.
    """
    net = four_bus_network()
    h = np.asarray(hours, dtype=float) + 0.5
    shape = clear_sky_shape(h)
    pv_units = []
    series = {}
    for bus, peak in zip((2, 3), pv_kw):
        for ph in pv_phases:
            uid = f"pv{bus}{ph}"
            kw = peak / len(pv_phases)
            pv_units.append(PvUnit(uid, bus, ph, kw * 1.1, uid))
            series[uid] = kw * shape
    loads = []
    for bus in (1, 2, 3):
        for ph in "abc":
            col = f"load{bus}{ph}"
            series[col] = np.full(len(h), load_kw / 3)
            loads.append(LoadSpec(col, bus, ph, col))
    scen = ScenarioSet(1.0, len(h), ("d0",), series, tuple(loads))
    # a stiff penalty keeps the small feeder from trading violations for curtailment
    cfg = OpfConfig(c_h=1e4, v_max=v_max, horizon=len(h))
    return net, DerSet(pv=tuple(pv_units)), scen, cfg


# ----------------------------------------------------------------------------
# CIGRE-like 19-node feeder
# ----------------------------------------------------------------------------

#: (from, to, length m, cable) with node k = benchmark R(k-1); 1 is the MV slack.
CIGRE19_LINES = [
    (2, 3, 35, "UG1"), (3, 4, 35, "UG1"), (4, 5, 35, "UG1"), (5, 6, 35, "UG1"),
    (6, 7, 35, "UG1"), (7, 8, 35, "UG1"), (8, 9, 35, "UG1"), (9, 10, 35, "UG1"),
    (10, 11, 35, "UG1"), (4, 12, 30, "UG3"), (5, 13, 35, "UG3"), (13, 14, 35, "UG3"),
    (14, 15, 35, "UG3"), (15, 16, 30, "UG3"), (7, 17, 30, "UG3"), (10, 18, 30, "UG3"),
    (11, 19, 30, "UG3"),
]
#: peak demand (kW) of the residential loads, synthetic values
CIGRE19_LOADS = {2: 36.0, 12: 6.0, 16: 14.0, 17: 15.0, 18: 10.0, 19: 13.0}
CIGRE19_PV_NODES = (3, 5, 7, 10, 12, 16, 17, 18, 19)
LOAD_SPLIT = {"a": 0.25, "b": 0.60, "c": 0.15}
PV_SPLIT = {"a": 0.25, "b": 0.25, "c": 0.50}
AMPACITY = {"UG1": 270.0, "UG3": 150.0}


def cigre19_network(slack_pu=1.0):
    buses = [Bus(1, kind="slack")] + [Bus(k) for k in range(2, 20)]
    branches = [BranchSpec(1, 2, transformer_matrix(400.0, 400.0), 1.0,
                           400e3 / (math.sqrt(3) * 400.0), "trafo")]
    cables = {"UG1": cable_matrix(*UG1), "UG3": cable_matrix(*UG3)}
    for f, t, length, kind in CIGRE19_LINES:
        branches.append(BranchSpec(f, t, cables[kind], length / 1000.0, AMPACITY[kind], f"l{f}-{t}"))
    rot = np.exp(-2j * np.pi / 3)
    tap = TapChanger(0.0125, 0, 0, (slack_pu, slack_pu * rot, slack_pu * np.conj(rot)))
    return NetworkModel.build(buses, branches, tap, grounding=Grounding(40.0, 3.0))


def cigre19_ders(pv_ratio=1.5, pf_min=0.9, loads=None):
    """PV at the nine study nodes, BESS at node 19 phase c, 5 kW flexible load at 16 c."""
    loads = CIGRE19_LOADS if loads is None else loads
    total_pv = pv_ratio * sum(loads.values())
    per_node = total_pv / len(CIGRE19_PV_NODES)
    pv = []
    for node in CIGRE19_PV_NODES:
        for ph, share in PV_SPLIT.items():
            pv.append(PvUnit(f"pv{node}{ph}", node, ph, per_node * share, f"pv{node}{ph}",
                             pf_min=pf_min))
    s_pv = per_node * PV_SPLIT["c"]
    e_cap = 0.5 * s_pv
    p_max = e_cap / 2.0
    bess = Bess("bess19c", 19, "c", e_cap, p_max, p_max, 0.5 * e_cap)
    flex = FlexLoad("flex16c", 16, "c", 5.0, "flex16c")
    return DerSet(tuple(pv), (bess,), (flex,))


def cigre19_scenarios(ders, n_days=10, n_test_days=3, seed=7, loads=None):
    loads = CIGRE19_LOADS if loads is None else loads
    load_specs = []
    load_peaks = {}
    for node, peak in loads.items():
        for ph, share in LOAD_SPLIT.items():
            col = f"load{node}{ph}"
            load_peaks[col] = peak * share
            load_specs.append(LoadSpec(col, node, ph, col, 0.95))
    pv_ratings = {g.profile: g.s_rated for g in ders.pv}
    spec = SyntheticSpec(load_peaks, pv_ratings, n_days=n_days, n_test_days=n_test_days)
    scen = generate_synthetic_scenarios(spec, load_specs, seed)
    series = dict(scen.series)
    for f in ders.flex:
        series[f.profile] = np.full(scen.horizon, f.p_shift)
    return ScenarioSet(scen.dt, scen.periods_per_day, scen.days, series, scen.loads, scen.split)


def cigre19_case(n_days=10, n_test_days=3, seed=7, v_max=1.05, slack_pu=1.03):
    """Feeder, DERs, synthetic days and OPF settings of the 19-node study.

    The MV-side voltage of 1.03 pu makes unmanaged midday PV overshoot 1.05 pu.
    """
    net = cigre19_network(slack_pu)
    ders = cigre19_ders()
    scen = cigre19_scenarios(ders, n_days, n_test_days, seed)
    cfg = OpfConfig(c_p=0.1, c_q=0.001, c_h=100.0, v_max=v_max, horizon=24)
    return net, ders, scen, cfg


# ----------------------------------------------------------------------------
# random feeders
# ----------------------------------------------------------------------------

def random_radial_network(rng, n_buses, three_phase=True, grounding=True):
    """Random tree with UG-style cables; laterals may be single-phase when ``three_phase`` is False."""
    buses = [Bus(0, kind="slack")]
    branches = []
    phases = {0: ("a", "b", "c")}
    for k in range(1, n_buses):
        parent = int(rng.integers(0, k))
        if three_phase or rng.random() < 0.6:
            ph = phases[parent]
        else:
            ph = (phases[parent][int(rng.integers(0, len(phases[parent])))],)
        phases[k] = ph
        buses.append(Bus(k, phases=ph))
        r, x = (UG1, UG3)[int(rng.integers(0, 2))]
        z = cable_matrix(r, x, mutual_ratio=rng.uniform(0.1, 0.5))
        length = rng.uniform(0.02, 0.1)
        branches.append(BranchSpec(parent, k, z, length, 300.0, f"l{parent}-{k}"))
    return NetworkModel.build(buses, branches, grounding=Grounding() if grounding else None)
