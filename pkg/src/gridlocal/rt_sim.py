"""Closed-loop operation of a feeder under three control regimes.

* ``grid_code``: fixed volt-var droop on every PV inverter, no curtailment,
  batteries idle, no load shifting.
* ``centralized_opf``: day-ahead deterministic OPF with perfect foresight,
  setpoints applied as computed.
* ``learned_local``: each DER follows its own learned law, fed only with
  measurements taken at its own node.

Local laws and the network are coupled through the node voltage, so each
period is solved as a damped fixed point of "measure, command, power flow".
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ctrl_design.controllers import LocalController, predict
from .der import DerSet, bess_headroom
from .errors import PowerFlowError, ValidationError
from .opf import (OpfConfig, Setpoints, branch_currents, exact_loss_kw, fixed_injections, injections,
                  objective_terms, pv_available, solve_deterministic_opf)
from .powerflow import NEG_SEQ, bus_vuf, sweep_batch

log = logging.getLogger(__name__)

METHOD_KINDS = ("grid_code", "centralized_opf", "learned_local")


@dataclass(frozen=True)
class DroopCurve:
    """Volt-var droop: zero inside ``dead_band``, linear to full capability at ``full``.

    Voltages below ``full[0]`` give full injection, above ``full[1]`` full
    absorption.
    """

    dead_band: tuple = (0.97, 1.03)
    full: tuple = (0.94, 1.06)

    def __post_init__(self):
        lo, hi = self.dead_band
        if not (self.full[0] < lo <= hi < self.full[1]):
            raise ValidationError("droop curve needs full[0] < dead_band[0] <= dead_band[1] < full[1]")

    def __call__(self, v):
        """Reactive share in [-1, 1] (positive is injection)."""
        lo, hi = self.dead_band
        if v <= lo:
            return min((lo - v) / (lo - self.full[0]), 1.0)
        if v >= hi:
            return -min((v - hi) / (self.full[1] - hi), 1.0)
        return 0.0


@dataclass(frozen=True)
class MethodSpec:
    """A control regime and its parameters.

    ``params`` is a :class:`DroopCurve` for ``grid_code``, an
    :class:`OpfConfig` for ``centralized_opf`` and a sequence of
    :class:`LocalController` for ``learned_local``.
    """

    kind: str
    params: object = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValidationError(f"unknown method kind {self.kind!r}")
        if self.kind == "grid_code" and self.params is None:
            object.__setattr__(self, "params", DroopCurve())
        want = {"grid_code": DroopCurve, "centralized_opf": OpfConfig}.get(self.kind)
        if want is not None and not isinstance(self.params, want):
            raise ValidationError(f"{self.kind} needs a {want.__name__}")
        if self.kind == "learned_local":
            if self.params is None:
                raise ValidationError("learned_local needs a controller bundle")
            ctrls = tuple(self.params)
            if not all(isinstance(c, LocalController) for c in ctrls):
                raise ValidationError("learned_local parameters must be LocalController objects")
            object.__setattr__(self, "params", ctrls)


@dataclass(frozen=True)
class SimConfig:
    """Settings of the closed-loop simulation."""

    fixed_point_iter: int = 60
    fixed_point_tol: float = 1e-6
    damping: float = 0.5
    pf_tol: float = 1e-10
    pf_max_iter: int = 200


@dataclass
class OperationReport:
    """Operating metrics and per-period traces of one method on a test set.

    Percentages: ``losses_pct`` of served load energy, ``i_max_pct`` of
    ampacity, ``vuf_max`` exact unbalance, ``p_curt_pct`` of available PV
    energy.  ``objective`` is in CHF (same terms as the OPF) and
    ``day_objectives`` splits it per day.
    """

    method: str
    losses_pct: float
    v_max: float
    i_max_pct: float
    vuf_max: float
    p_curt_pct: float
    objective: float
    day_objectives: dict
    traces: dict = field(repr=False, default_factory=dict)
    events: list = field(repr=False, default_factory=list)

    def summary_row(self):
        return {"method": self.method, "losses_pct": self.losses_pct, "v_max": self.v_max,
                "i_max_pct": self.i_max_pct, "vuf_max": self.vuf_max, "p_curt_pct": self.p_curt_pct,
                "objective": self.objective}


# ----------------------------------------------------------------------------
# local control
# ----------------------------------------------------------------------------

@dataclass
class DerState:
    """Temporal state carried between periods: stored energy and running shift sums."""

    energy: dict
    shift_sum: dict
    slots_left: int

    @classmethod
    def start(cls, ders: DerSet, periods, energy=None):
        energy = dict(energy or {})
        return cls({b.id: float(energy.get(b.id, b.e_start)) for b in ders.bess},
                   {f.id: 0 for f in ders.flex}, int(periods))


def clamp_pv(unit, p, q, avail):
    """Clip PV active power to ``[0, avail]`` and reactive power to the inverter envelope."""
    p_c = min(max(p, 0.0), avail)
    if unit.q_mode != "box":
        # the circle caps active power too
        p_c = min(p_c, unit.s_rated)
    q_lo, q_hi = unit.q_limits(p_c)
    return p_c, min(max(q, q_lo), q_hi)


def clamp_bess(unit, p, q, energy, dt):
    """Clip battery output (discharge positive, kW) to power, energy and apparent-power limits."""
    ch_max, dis_max = bess_headroom(energy, unit, dt)
    p_c = min(max(p, -ch_max), dis_max)
    q_max = math.sqrt(max(unit.s_max ** 2 - p_c ** 2, 0.0))
    return p_c, min(max(q, -q_max), q_max)


def guard_shift(n, running, slots_left, base_kw, p_shift):
    """Shift command that can still be undone before the day ends.

    ``slots_left`` counts the current period.  Returns ``(command, reason)``
    with ``reason`` None when the request passed unchanged.
    """
    n = int(np.clip(n, -1, 1))
    if abs(running) >= slots_left and running != 0:
        forced = -int(np.sign(running))
        return forced, None if forced == n else "forced return"
    if abs(running + n) > slots_left - 1:
        return 0, "conservation guard"
    if base_kw + n * p_shift < -1e-9:
        return 0, "negative load guard"
    return n, None


def apply_local_controls(controllers, measurements, ders: DerSet, state: DerState, p_avail, base_kw, dt,
                         power_base=1.0, events=None):
    """Commands of every DER from its own measurements, clamped to its envelope.

    Parameters
    ----------
    controllers : sequence of LocalController
    measurements : dict
        DER id to a feature dict; each must contain exactly the features
        the DER's laws declare.
    p_avail : dict
        PV id to available power (kW).
    base_kw : dict
        Flexible load id to its base consumption this period (kW).
    power_base : float
        kW per pu; battery laws work in pu.
    events : list, optional
        Receives one entry per clamp.

    Returns
    -------
    dict
        DER id to ``(p, q)`` in kW/kvar for PV and BESS, or the shift class
        for flexible loads.
    """
    events = events if events is not None else []
    laws = {}
    for c in controllers:
        laws.setdefault(c.der_id, {})[c.law] = c
    out = {}
    for g in ders.pv:
        law = laws.get(g.id, {})
        m = measurements[g.id]
        frac = predict(law["curve_p"], m) if "curve_p" in law else 1.0
        q_share = predict(law["curve_q"], m) if "curve_q" in law else 0.0
        avail = p_avail[g.id]
        p, q = frac * avail, q_share * g.s_rated
        pc, qc = clamp_pv(g, p, q, avail)
        if abs(pc - p) > 1e-9 or abs(qc - q) > 1e-9:
            events.append({"der": g.id, "kind": "pv envelope", "requested": (p, q), "applied": (pc, qc)})
        out[g.id] = (pc, qc)
    for b in ders.bess:
        law = laws.get(b.id, {})
        if "svr_pq" in law:
            p_pu, q_pu = predict(law["svr_pq"], measurements[b.id])
        else:
            p_pu, q_pu = 0.0, 0.0
        p, q = p_pu * power_base, q_pu * power_base
        pc, qc = clamp_bess(b, p, q, state.energy[b.id], dt)
        if abs(pc - p) > 1e-9 or abs(qc - q) > 1e-9:
            events.append({"der": b.id, "kind": "bess envelope", "requested": (p, q), "applied": (pc, qc)})
        out[b.id] = (pc, qc)
    for f in ders.flex:
        law = laws.get(f.id, {})
        n = predict(law["svc_shift"], measurements[f.id]) if "svc_shift" in law else 0
        nc, why = guard_shift(n, state.shift_sum[f.id], state.slots_left, base_kw[f.id], f.p_shift)
        if why:
            events.append({"der": f.id, "kind": why, "requested": n, "applied": nc})
        out[f.id] = nc
    return out


# ----------------------------------------------------------------------------
# simulation
# ----------------------------------------------------------------------------

def _flow(net, s_t, tap, v0, sim: SimConfig, t):
    root = net.root_voltage_nodes(int(tap))
    v, ok, it, step = sweep_batch(net, s_t[None, :], root, None if v0 is None else v0[None, :],
                                  sim.pf_tol, sim.pf_max_iter)
    if not ok[0]:
        raise PowerFlowError(f"power flow diverged at step {t}", float(step[0]), it)
    return v[0]


def _commit(ders, sets: Setpoints, t, state: DerState, dt):
    """Advance battery energy and shift sums after period ``t``."""
    for k, b in enumerate(ders.bess):
        e = state.energy[b.id] + (b.eta * sets.p_ch[k, t] - sets.p_dis[k, t] / b.eta) * dt
        lo, hi = b.e_bounds
        state.energy[b.id] = min(max(e, lo), hi)
    for k, f in enumerate(ders.flex):
        state.shift_sum[f.id] += int(sets.n_shift[k, t])
    state.slots_left -= 1


def _local_measurements(net, ders, node_p, node_q, pv_node, v_abs, avail_pu):
    base = net.phase_power_base
    meas = {}
    for k, g in enumerate(ders.pv):
        i = net.node(g.bus, g.phase)
        meas[g.id] = {"v": v_abs[i], "p_avail": avail_pu[k]}
    for b in ders.bess:
        i = net.node(b.bus, b.phase)
        meas[b.id] = {"v": v_abs[i], "p_load": node_p[i] / base, "q_load": node_q[i] / base,
                      "p_g": pv_node[i] / base}
    for f in ders.flex:
        i = net.node(f.bus, f.phase)
        meas[f.id] = {"v": v_abs[i], "p_g": pv_node[i] / base}
    return meas


def _write_period(ders, sets: Setpoints, t, cmd):
    for k, g in enumerate(ders.pv):
        sets.p_g[k, t], sets.q_g[k, t] = cmd[g.id]
    for k, b in enumerate(ders.bess):
        p, q = cmd[b.id]
        sets.p_dis[k, t], sets.p_ch[k, t], sets.q_b[k, t] = max(p, 0.0), max(-p, 0.0), q
    for k, f in enumerate(ders.flex):
        sets.n_shift[k, t] = cmd[f.id]


def _grid_code_commands(ders, curve: DroopCurve, v_abs, net, avail):
    cmd = {}
    for k, g in enumerate(ders.pv):
        v = v_abs[net.node(g.bus, g.phase)]
        p = avail[k]
        q_lo, q_hi = g.q_limits(min(p, g.s_rated))
        share = curve(v)
        cmd[g.id] = (p, share * (q_hi if share >= 0 else -q_lo))
    for b in ders.bess:
        cmd[b.id] = (0.0, 0.0)
    for f in ders.flex:
        cmd[f.id] = 0
    return cmd


def _blend(prev, new, damping, ders):
    """Relax continuous commands towards ``new``; discrete shifts switch directly."""
    if prev is None:
        return new
    out = {}
    for d in ders.pv + ders.bess:
        a, b = prev[d.id], new[d.id]
        out[d.id] = (a[0] + damping * (b[0] - a[0]), a[1] + damping * (b[1] - a[1]))
    for f in ders.flex:
        out[f.id] = new[f.id]
    return out


def _period_injection(net, ders, s_fixed, sets: Setpoints, t):
    """Complex injections (N,) in pu of period ``t``; ``s_fixed`` is the uncontrollable part in kVA."""
    s = s_fixed.astype(complex)
    for k, g in enumerate(ders.pv):
        s[net.node(g.bus, g.phase)] += sets.p_g[k, t] + 1j * sets.q_g[k, t]
    for k, b in enumerate(ders.bess):
        s[net.node(b.bus, b.phase)] += (sets.p_dis[k, t] - sets.p_ch[k, t]) + 1j * sets.q_b[k, t]
    for k, f in enumerate(ders.flex):
        s[net.node(f.bus, f.phase)] -= sets.n_shift[k, t] * f.p_shift * (1 + 1j * np.tan(np.arccos(f.power_factor)))
    return s / net.phase_power_base


def _local_day(net, ders, day_scen, method: MethodSpec, state: DerState, sim: SimConfig, events):
    """Closed-loop run of one day with local laws (grid code or learned)."""
    T = day_scen.horizon
    dt = day_scen.dt
    base = net.phase_power_base
    avail = pv_available(ders, day_scen)
    sets = Setpoints.idle(ders, avail)
    node_p, node_q = day_scen.node_loads(net)
    p0, q0 = fixed_injections(net, ders, day_scen)
    s_fixed = p0 + 1j * q0
    flex_base = {f.id: day_scen.column(f.profile) for f in ders.flex}
    v_out = np.zeros((T, net.n_nodes), dtype=complex)
    v = None

    def commands(t, v_abs, log_to):
        if method.kind == "grid_code":
            return _grid_code_commands(ders, method.params, v_abs, net, avail[:, t])
        pv_node = np.zeros(net.n_nodes)
        for k, g in enumerate(ders.pv):
            pv_node[net.node(g.bus, g.phase)] += sets.p_g[k, t]
        meas = _local_measurements(net, ders, node_p[t], node_q[t], pv_node, v_abs, avail[:, t] / base)
        return apply_local_controls(method.params, meas, ders, state,
                                    {g.id: avail[k, t] for k, g in enumerate(ders.pv)},
                                    {f.id: flex_base[f.id][t] for f in ders.flex}, dt, base, log_to)

    for t in range(T):
        if t > 0:
            # warm start from the previous period's commands
            for k in range(len(ders.pv)):
                frac = sets.p_g[k, t - 1] / avail[k, t - 1] if avail[k, t - 1] > 1e-9 else 1.0
                sets.p_g[k, t] = min(frac, 1.0) * avail[k, t]
                sets.q_g[k, t] = sets.q_g[k, t - 1]
        cmd = None
        v_abs = None
        step = np.inf
        for it in range(sim.fixed_point_iter):
            v = _flow(net, _period_injection(net, ders, s_fixed[t], sets, t), sets.tap[t], v, sim, t)
            v_abs_new = np.abs(v)
            step = np.inf if v_abs is None else float(np.max(np.abs(v_abs_new - v_abs), initial=0.0))
            v_abs = v_abs_new
            if step < sim.fixed_point_tol:
                break
            new = commands(t, v_abs, [])
            cmd = _blend(cmd, new, 1.0 if cmd is None else sim.damping, ders)
            _write_period(ders, sets, t, cmd)
        else:
            events.append({"period": t, "kind": "fixed point not reached", "step": step})
            log.info("period %d: local control fixed point stopped at step %.2e", t, step)
        if method.kind == "learned_local":
            # record clamp events of the applied commands only
            clamps = []
            commands(t, v_abs, clamps)
            events.extend({"period": t, **e} for e in clamps)
        v_out[t] = v
        _commit(ders, sets, t, state, dt)
    return sets, avail, v_out


def _opf_day(net, ders, day_scen, cfg: OpfConfig, state: DerState, sim: SimConfig):
    """Perfect-foresight OPF over one day, then exact flows of its setpoints."""
    cfg_day = cfg if cfg.horizon == day_scen.horizon else _replace_horizon(cfg, day_scen.horizon)
    sol = solve_deterministic_opf(net, ders, day_scen, cfg_day, e_start=dict(state.energy))
    sets = sol.setpoints
    s = injections(net, ders, day_scen, sets)
    v_out = np.zeros_like(s)
    v_prev = None
    for t in range(day_scen.horizon):
        v_out[t] = _flow(net, s[t], sets.tap[t], v_prev, sim, t)
        v_prev = v_out[t]
        _commit(ders, sets, t, state, day_scen.dt)
    return sets, sol.p_avail, v_out


def _replace_horizon(cfg, horizon):
    from dataclasses import replace
    return replace(cfg, horizon=horizon)


def simulate_method(net, ders, test_scenario, method: MethodSpec, cfg: OpfConfig | None = None,
                    sim: SimConfig | None = None, train_days=(), seed=0):
    """Operate ``test_scenario`` day by day under ``method``.

    Parameters
    ----------
    cfg : OpfConfig, optional
        Limits and cost weights used for the objective; defaults to
        ``method.params`` for the OPF method and ``OpfConfig()`` otherwise.
    train_days : sequence of str
        Days the learned laws were trained on; overlap with the test days
        raises for ``learned_local``.
    seed : int
        Accepted for interface symmetry; the simulation is deterministic.

    Raises
    ------
    ValidationError
        Train/test overlap for ``learned_local``.
    PowerFlowError
        Power flow divergence, with the step index in the message.
    """
    sim = sim or SimConfig()
    if cfg is None:
        cfg = method.params if method.kind == "centralized_opf" else OpfConfig()
    if method.kind == "learned_local":
        overlap = sorted(set(train_days) & set(test_scenario.days))
        if overlap:
            raise ValidationError(f"test days {overlap} were used for training")
    state = DerState.start(ders, test_scenario.periods_per_day)
    events = []
    traces = {"days": [], "sets": [], "avail": [], "voltages": [], "soc": []}
    for day in test_scenario.days:
        sc = test_scenario.day(day)
        state.slots_left = sc.horizon
        for f in ders.flex:
            state.shift_sum[f.id] = 0
        e0 = [state.energy[b.id] for b in ders.bess]
        first_event = len(events)
        if method.kind == "centralized_opf":
            sets, avail, v = _opf_day(net, ders, sc, method.params, state, sim)
        else:
            sets, avail, v = _local_day(net, ders, sc, method, state, sim, events)
        for e in events[first_event:]:
            e["day"] = day
        e_traj = _energy_trace(ders, sets, e0, sc.dt)
        traces["days"].append(day)
        traces["sets"].append(sets)
        traces["avail"].append(avail)
        traces["voltages"].append(v)
        traces["soc"].append(e_traj)
    rep = compute_report_metrics(traces, net, ders, test_scenario, cfg)
    rep.method = method.kind
    rep.events = events
    return rep


def _energy_trace(ders, sets, e0, dt):
    out = np.zeros((len(ders.bess), sets.p_g.shape[1] + 1))
    for k, b in enumerate(ders.bess):
        out[k, 0] = e0[k]
        for t in range(sets.p_g.shape[1]):
            e = out[k, t] + (b.eta * sets.p_ch[k, t] - sets.p_dis[k, t] / b.eta) * dt
            lo, hi = b.e_bounds
            out[k, t + 1] = min(max(e, lo), hi)
    return out


# ----------------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------------

def realized_slacks(net, v, i_br, cfg: OpfConfig):
    """Worst violations of one horizon in the OPF's slack units."""
    v_abs = np.abs(v)
    eta_v = max(0.0, float(np.max(v_abs - cfg.v_max, initial=0.0)),
                float(np.max(cfg.v_min - v_abs, initial=0.0)))
    eta_i = max(0.0, float(np.max(np.abs(i_br) - net.ampacity_pu, initial=0.0)))
    neg = [np.abs(v[:, idx] @ NEG_SEQ) for _, idx in net.three_phase_buses()]
    vn = float(np.max(np.concatenate(neg))) if neg else 0.0
    eta_vuf = max(0.0, vn - cfg.vuf_max / 100.0)
    return {"eta_v": eta_v, "eta_i": eta_i, "eta_vuf": eta_vuf}


def _served_load_kw(net, ders, scen, sets):
    p, _ = scen.node_loads(net)
    total = p.sum(axis=1)
    for k, f in enumerate(ders.flex):
        total = total + scen.column(f.profile) + sets.n_shift[k] * f.p_shift
    return total


def compute_report_metrics(traces, net, ders, scenario, cfg: OpfConfig | None = None, method=""):
    """Operating metrics over all days of ``traces``.

    ``traces`` holds per day the setpoints, available PV power and
    voltages (as written by :func:`simulate_method`).
    """
    cfg = cfg or OpfConfig()
    loss_e = load_e = curt_e = avail_e = 0.0
    v_max = float(np.max(np.abs(net.root_voltage_nodes(0)), initial=0.0))
    i_max = vuf_max = 0.0
    total_obj = 0.0
    day_obj = {}
    rows = []
    for day, sets, avail, v in zip(traces["days"], traces["sets"], traces["avail"], traces["voltages"]):
        sc = scenario.day(day)
        dt = sc.dt
        s = injections(net, ders, sc, sets)
        loss = exact_loss_kw(net, s, v) if v.size else np.zeros(sc.horizon)
        i_br = branch_currents(net, s, v) if v.size else np.zeros_like(v)
        served = _served_load_kw(net, ders, sc, sets)
        loss_e += float(np.sum(loss)) * dt
        load_e += float(np.sum(served)) * dt
        curt_e += float(np.sum(np.maximum(avail - sets.p_g, 0.0))) * dt
        avail_e += float(np.sum(avail)) * dt
        if v.size:
            roots = np.array([np.abs(net.root_voltage_nodes(int(r))) for r in sets.tap])
            v_max = max(v_max, float(np.max(np.abs(v))), float(np.max(roots)))
            amp = np.where(net.ampacity_pu > 0, net.ampacity_pu, np.inf)
            i_max = max(i_max, float(np.max(np.abs(i_br) / amp)) * 100.0)
            vuf = bus_vuf(net, v)
            if vuf.size:
                vuf_max = max(vuf_max, float(np.nanmax(vuf)))
        slacks = realized_slacks(net, v, i_br, cfg) if v.size else {}
        shift = (np.abs(sets.n_shift) * np.array([f.p_shift for f in ders.flex])[:, None]
                 if len(ders.flex) else 0.0)
        terms = objective_terms(avail, sets.p_g, sets.q_g, loss, dt, cfg, slacks, sets.p_ch + sets.p_dis, shift)
        day_obj[day] = float(sum(terms.values()))
        total_obj += day_obj[day]
        rows.append((day, loss, served, v, i_br))
    rep = OperationReport(method, 100.0 * loss_e / load_e if load_e > 0 else 0.0, v_max, i_max, vuf_max,
                          100.0 * curt_e / avail_e if avail_e > 0 else 0.0, total_obj, day_obj,
                          dict(traces, loss_kw=[r[1] for r in rows], load_kw=[r[2] for r in rows],
                               currents=[r[4] for r in rows]))
    return rep


# ----------------------------------------------------------------------------
# output
# ----------------------------------------------------------------------------

SUMMARY_FIELDS = ("method", "losses_pct", "v_max", "i_max_pct", "vuf_max", "p_curt_pct", "objective")


def _fmt(x):
    if not isinstance(x, float):
        return str(x)
    text = f"{x:.6f}"
    return "0.000000" if text == "-0.000000" else text


def write_summary(path, reports):
    """Comparison table, one row per method (units in the header)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "losses_pct[%]", "v_max[pu]", "i_max_pct[%]", "vuf_max[%]", "p_curt_pct[%]",
                    "objective[CHF]"])
        for r in reports:
            row = r.summary_row()
            w.writerow([_fmt(row[k]) for k in SUMMARY_FIELDS])


def write_traces(path, net, ders, report: OperationReport):
    """Per-period trace: node voltages, max branch loading, SoC, shifts and DER commands."""
    node_names = [f"v_{b}{p}" for b, p in net.nodes]
    head = (["day", "t", "loss_kw", "load_kw", "i_max_pct"] + node_names
            + [f"p_{g.id}" for g in ders.pv] + [f"q_{g.id}" for g in ders.pv]
            + [f"p_{b.id}" for b in ders.bess] + [f"q_{b.id}" for b in ders.bess]
            + [f"e_{b.id}" for b in ders.bess] + [f"n_{f.id}" for f in ders.flex])
    amp = np.where(net.ampacity_pu > 0, net.ampacity_pu, np.inf)
    tr = report.traces
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for d, day in enumerate(tr["days"]):
            sets, v, soc = tr["sets"][d], tr["voltages"][d], tr["soc"][d]
            for t in range(v.shape[0]):
                row = [day, t, _fmt(float(tr["loss_kw"][d][t])), _fmt(float(tr["load_kw"][d][t])),
                       _fmt(float(np.max(np.abs(tr["currents"][d][t]) / amp, initial=0.0)) * 100.0)]
                row += [_fmt(float(a)) for a in np.abs(v[t])]
                row += [_fmt(float(a)) for a in sets.p_g[:, t]] + [_fmt(float(a)) for a in sets.q_g[:, t]]
                row += [_fmt(float(a)) for a in sets.p_dis[:, t] - sets.p_ch[:, t]]
                row += [_fmt(float(a)) for a in sets.q_b[:, t]]
                row += [_fmt(float(a)) for a in soc[:, t + 1]]
                row += [str(int(a)) for a in sets.n_shift[:, t]]
                w.writerow(row)
