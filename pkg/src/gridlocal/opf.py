"""Multi-period three-phase OPF linearized around a single BFS sweep.

Each inner iteration linearizes the sweep at the voltages ``v_bar`` of the
previous exact power flow, solves the resulting MILP, and projects the
setpoints back onto the AC manifold with :func:`bfs_power_flow`.

Voltages and branch currents are affine functions of the DER decisions, so
they are not variables of the MILP.  Magnitude limits on complex quantities
use an inscribed polygon; only faces that are violated (or nearly binding)
are added to the MILP, which is re-solved until no omitted face is violated.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .der import DerSet
from .errors import InfeasibleError, PowerFlowError, ValidationError
from .powerflow import NEG_SEQ, ROTATION, _result, sweep_batch
from .solver import IntegerSpec, LinearProgram, polygon_normals, solve_milp_highs, solve_milp_native

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OpfConfig:
    """OPF weights, limits and iteration controls.

    Costs are in CHF per kWh (``c_p``), per kvarh (``c_q``) and per pu of
    limit violation (``c_h``).  ``c_reg`` is a small tie-breaking cost on
    battery throughput and load shifting.
    """

    c_p: float = 0.1
    c_q: float = 0.001
    c_h: float = 100.0
    v_min: float = 0.95
    v_max: float = 1.05
    vuf_max: float = 2.0
    dt: float = 1.0
    horizon: int = 24
    inner_tol: float = 1e-5
    inner_max_iter: int = 15
    polygon_sides: int = 16
    backend: str = "highs"
    int_cap: int = 64
    c_reg: float = 1e-4
    lazy_tol: float = 1e-7
    max_lazy_rounds: int = 40
    seed_band: float = 0.02
    loss_rel_tol: float = 1e-2
    mip_gap: float = 1e-3
    freeze_after: int = 2

    def __post_init__(self):
        if not self.c_q < self.c_p:
            raise ValidationError("c_q must be smaller than c_p")
        if not self.v_min < self.v_max:
            raise ValidationError("v_min must be below v_max")
        if self.dt <= 0 or self.horizon < 1:
            raise ValidationError("dt and horizon must be positive")
        if self.polygon_sides < 4:
            raise ValidationError("polygon_sides must be >= 4")
        if self.backend not in ("highs", "native"):
            raise ValidationError(f"unknown backend {self.backend!r}")


@dataclass
class Margins:
    """Constraint tightenings (pu), each of shape (T, N)."""

    omega_v_upper: np.ndarray
    omega_v_lower: np.ndarray
    omega_i: np.ndarray

    def __post_init__(self):
        for name in ("omega_v_upper", "omega_v_lower", "omega_i"):
            arr = np.maximum(np.asarray(getattr(self, name), dtype=float), 0.0)
            setattr(self, name, arr)

    @classmethod
    def zeros(cls, horizon, n_nodes):
        z = np.zeros((horizon, n_nodes))
        return cls(z, z.copy(), z.copy())

    def arrays(self):
        return self.omega_v_upper, self.omega_v_lower, self.omega_i

    def max_change(self, other):
        return max(float(np.max(np.abs(a - b), initial=0.0)) for a, b in zip(self.arrays(), other.arrays()))

    def is_zero(self):
        return all(not np.any(a) for a in self.arrays())


@dataclass
class Setpoints:
    """DER commands over a horizon (kW, kvar, kWh); arrays are (units, T)."""

    p_g: np.ndarray
    q_g: np.ndarray
    p_ch: np.ndarray
    p_dis: np.ndarray
    q_b: np.ndarray
    n_shift: np.ndarray
    tap: np.ndarray

    @classmethod
    def idle(cls, ders: DerSet, p_avail, tap=0):
        g, T = p_avail.shape
        nb = len(ders.bess)
        return cls(p_avail.copy(), np.zeros((g, T)), np.zeros((nb, T)), np.zeros((nb, T)),
                   np.zeros((nb, T)), np.zeros((len(ders.flex), T), dtype=int),
                   np.full(T, tap, dtype=int))

    def period(self, t):
        return Setpoints(self.p_g[:, t:t + 1], self.q_g[:, t:t + 1], self.p_ch[:, t:t + 1],
                         self.p_dis[:, t:t + 1], self.q_b[:, t:t + 1], self.n_shift[:, t:t + 1],
                         self.tap[t:t + 1])


@dataclass
class OpfSolution:
    setpoints: Setpoints
    e_bat: np.ndarray  # (B, T + 1) kWh, column 0 is the start energy
    p_avail: np.ndarray  # (G, T) kW
    slacks: dict
    flows: list
    objective: float
    voltages: np.ndarray  # (T, N) exact complex voltages
    branch_currents: np.ndarray  # (T, N)
    converged: bool
    inner_iterations: int
    ders: DerSet = None
    cfg: OpfConfig = None
    milp_objective: float = float("nan")
    loss_kw: np.ndarray = None  # (T,) exact network loss
    history: list = field(default_factory=list)
    outer_history: list = field(default_factory=list)  # chance-constrained loop diagnostics

    # convenience views (kW / kvar)
    @property
    def p_g(self):
        return self.setpoints.p_g

    @property
    def q_g(self):
        return self.setpoints.q_g

    @property
    def n_shift(self):
        return self.setpoints.n_shift

    @property
    def tap(self):
        return self.setpoints.tap

    def to_csv(self, path, day_label=""):
        """One row per (DER, t) plus per-period tap and slack summary rows."""
        sp_ = self.setpoints
        T = sp_.tap.size
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "t", "der", "kind", "p_kw", "q_kvar", "extra"])
            for t in range(T):
                for k, pv in enumerate(self.ders.pv):
                    w.writerow([day_label, t, pv.id, "pv", f"{sp_.p_g[k, t]:.6f}",
                                f"{sp_.q_g[k, t]:.6f}", f"{self.p_avail[k, t]:.6f}"])
                for k, b in enumerate(self.ders.bess):
                    w.writerow([day_label, t, b.id, "bess", f"{sp_.p_ch[k, t] - sp_.p_dis[k, t]:.6f}",
                                f"{sp_.q_b[k, t]:.6f}", f"{self.e_bat[k, t + 1]:.6f}"])
                for k, f in enumerate(self.ders.flex):
                    w.writerow([day_label, t, f.id, "flex", f"{sp_.n_shift[k, t] * f.p_shift:.6f}",
                                "0", str(int(sp_.n_shift[k, t]))])
                w.writerow([day_label, t, "tap", "tap", str(int(sp_.tap[t])), "", ""])
            for name in ("eta_v", "eta_i", "eta_vuf"):
                w.writerow([day_label, "", name, "slack", f"{self.slacks[name]:.8f}", "", ""])


# ----------------------------------------------------------------------------
# injections
# ----------------------------------------------------------------------------

def fixed_injections(net, ders, scenario):
    """Uncontrollable part of the injections: ``-(loads + flexible base)``, (T, N) kW/kvar."""
    p, q = scenario.node_loads(net)
    for f in ders.flex:
        i = net.node(f.bus, f.phase)
        base = scenario.column(f.profile)
        p[:, i] += base
        q[:, i] += base * np.tan(np.arccos(f.power_factor))
    return -p, -q


def pv_available(ders, scenario):
    cols = [scenario.column(g.profile) for g in ders.pv]
    return np.array(cols, dtype=float).reshape(len(ders.pv), scenario.horizon)


def injections(net, ders, scenario, sets: Setpoints, pv_p=None):
    """Complex node injections (T, N) in pu for given setpoints.

    ``pv_p`` overrides the PV active power (e.g. realized output under
    forecast error); shape (G, T) or (S, G, T) for a batch.
    """
    p0, q0 = fixed_injections(net, ders, scenario)
    s = (p0 + 1j * q0).astype(complex)
    pv_p = sets.p_g if pv_p is None else np.asarray(pv_p)
    if pv_p.ndim == 3:
        s = np.broadcast_to(s, (pv_p.shape[0],) + s.shape).copy()
    for k, g in enumerate(ders.pv):
        i = net.node(g.bus, g.phase)
        s[..., :, i] += pv_p[..., k, :] + 1j * sets.q_g[k]
    for k, b in enumerate(ders.bess):
        i = net.node(b.bus, b.phase)
        s[..., :, i] += (sets.p_dis[k] - sets.p_ch[k]) + 1j * sets.q_b[k]
    for k, f in enumerate(ders.flex):
        i = net.node(f.bus, f.phase)
        s[..., :, i] -= sets.n_shift[k] * f.p_shift * (1 + 1j * np.tan(np.arccos(f.power_factor)))
    return s / net.phase_power_base


def exact_flows(net, s, tap, tol=1e-10, max_iter=200, v0=None):
    """Batched exact power flow over periods; returns voltages (T, N)."""
    roots = np.array([net.root_voltage_nodes(int(r)) for r in tap]).reshape(len(tap), -1)
    v, ok, it, step = sweep_batch(net, s, roots, v0, tol, max_iter)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise PowerFlowError(f"power flow did not converge at period {bad}", float(step[bad]), it)
    return v


def branch_currents(net, s, v):
    return np.conj(s / v) @ net.bibc.T


# ----------------------------------------------------------------------------
# variable layout
# ----------------------------------------------------------------------------

class _Layout:
    """Column indices of every decision variable; see :func:`variable_census`."""

    def __init__(self, lp: LinearProgram, net, ders, T, cfg, avail_pu, flex_lo, e_start):
        base = net.phase_power_base
        dt = cfg.dt
        G, B, F = len(ders.pv), len(ders.bess), len(ders.flex)
        self.T = T
        w_p = cfg.c_p * dt * base
        w_q = cfg.c_q * dt * base
        self.pv_p = np.zeros((G, T), dtype=int)
        self.pv_q = np.zeros((G, T), dtype=int)
        self.pv_qa = np.zeros((G, T), dtype=int)
        for k, g in enumerate(ders.pv):
            s_pu = g.s_rated / base
            for t in range(T):
                self.pv_p[k, t] = lp.add_var(f"pv_p[{g.id},{t}]", 0.0, min(avail_pu[k, t], s_pu), -w_p)
                if g.q_mode == "box":
                    qlo, qhi = g.q_min * s_pu, g.q_max * s_pu
                else:
                    qlo, qhi = -s_pu, s_pu
                self.pv_q[k, t] = lp.add_var(f"pv_q[{g.id},{t}]", qlo, qhi, 0.0)
                self.pv_qa[k, t] = lp.add_var(f"pv_qabs[{g.id},{t}]", 0.0, s_pu, w_q)
        self.b_ch = np.zeros((B, T), dtype=int)
        self.b_dis = np.zeros((B, T), dtype=int)
        self.b_q = np.zeros((B, T), dtype=int)
        self.b_e = np.zeros((B, T), dtype=int)
        self.b_u = np.zeros((B, T), dtype=int)
        w_reg = cfg.c_reg * dt * base
        for k, b in enumerate(ders.bess):
            pmax = b.p_max / base
            smax = b.s_max / base
            e_lo, e_hi = b.e_bounds
            for t in range(T):
                self.b_ch[k, t] = lp.add_var(f"bess_ch[{b.id},{t}]", 0.0, pmax, w_reg)
                self.b_dis[k, t] = lp.add_var(f"bess_dis[{b.id},{t}]", 0.0, pmax, w_reg)
                self.b_q[k, t] = lp.add_var(f"bess_q[{b.id},{t}]", -smax, smax, 0.0)
                self.b_e[k, t] = lp.add_var(f"bess_e[{b.id},{t}]", e_lo, e_hi, 0.0)
                self.b_u[k, t] = lp.add_var(f"bess_u[{b.id},{t}]", 0.0, 1.0, 0.0)
        self.f_n = np.zeros((F, T), dtype=int)
        self.f_abs = np.zeros((F, T), dtype=int)
        for k, f in enumerate(ders.flex):
            for t in range(T):
                lo = flex_lo[k, t] if f.p_shift > 0 else 0.0
                hi = 1.0 if f.p_shift > 0 else 0.0
                # small ramp over the horizon breaks ties between equivalent hours
                ramp = 0.1 * cfg.c_reg * dt * f.p_shift * (t + 1) / T
                self.f_n[k, t] = lp.add_var(f"flex_n[{f.id},{t}]", lo, hi, ramp)
                self.f_abs[k, t] = lp.add_var(f"flex_abs[{f.id},{t}]", 0.0, 1.0,
                                              cfg.c_reg * dt * f.p_shift)
        tc = net.tap
        self.tap_var = tc.tap_min < tc.tap_max
        self.tap_fixed = 0 if tc.tap_min <= 0 <= tc.tap_max else tc.tap_min
        self.tap = np.array([lp.add_var(f"tap[{t}]", tc.tap_min, tc.tap_max, 0.0) for t in range(T)]
                            if self.tap_var else [], dtype=int)
        self.loss = np.array([lp.add_var(f"loss[{t}]", 0.0, np.inf, w_p) for t in range(T)], dtype=int)
        self.eta_v = lp.add_var("eta_v", 0.0, np.inf, cfg.c_h)
        self.eta_i = lp.add_var("eta_i", 0.0, np.inf, cfg.c_h)
        self.eta_vuf = lp.add_var("eta_vuf", 0.0, np.inf, cfg.c_h)
        self.n_vars = lp.n_vars
        self.integers = list(self.b_u.ravel()) + list(self.f_n.ravel()) + list(self.tap)

    def period_columns(self, t):
        """Columns that move injections in period ``t`` and their node coupling."""
        cols = [self.pv_p[:, t], self.pv_q[:, t], self.b_ch[:, t], self.b_dis[:, t],
                self.b_q[:, t], self.f_n[:, t]]
        if self.tap_var:
            cols.append(self.tap[t:t + 1])
        return np.concatenate(cols).astype(int)


def variable_census(net, ders, T):
    """Number of MILP columns: ``T (3G + 5B + 2F + 1 + tau) + 3``.

    ``G``, ``B``, ``F`` count PV units, batteries and flexible loads, the
    ``1`` is the network loss of the period and ``tau`` is 1 when the tap
    range is non-trivial.  The 3 extra columns are the infinity-norm slacks
    for voltage, current and unbalance.
    """
    tau = 1 if net.tap.tap_min < net.tap.tap_max else 0
    return T * (3 * len(ders.pv) + 5 * len(ders.bess) + 2 * len(ders.flex) + 1 + tau) + 3


# ----------------------------------------------------------------------------
# constraint families
# ----------------------------------------------------------------------------

@dataclass
class _Family:
    """Elements ``z_e = const_e + coef_e . x[cols_e]`` with a limit.

    ``kind == "half"``: ``Re(z) <= limit + eta``.
    ``kind == "disk"``: ``|z| <= limit + eta`` approximated by inscribed polygon faces.
    """

    name: str
    kind: str
    cols: np.ndarray  # (E, k)
    coef: np.ndarray  # (E, k) complex
    const: np.ndarray  # (E,) complex
    limit: np.ndarray  # (E,)
    eta: int  # column or -1

    def values(self, x):
        return self.const + np.einsum("ek,ek->e", self.coef, x[self.cols])


class _Problem:
    """Affine voltage/current maps and constraint families at one ``v_bar``."""

    def __init__(self, net, ders, cfg, lay: _Layout, data, v_bar, margins: Margins):
        self.net, self.ders, self.cfg, self.lay = net, ders, cfg, lay
        T, N = v_bar.shape
        base = net.phase_power_base
        sides = cfg.polygon_sides
        self.normals = polygon_normals(sides)
        self.rot = np.exp(-1j * np.arctan2(self.normals[:, 1], self.normals[:, 0]))  # e^{-j theta_k}
        self.cos_half = np.cos(np.pi / sides)
        tap_root = net.tap.root_voltage(lay.tap_fixed)[net.node_phase]
        slack = np.array(net.tap.slack_voltage)[net.node_phase]
        tap_dir = -net.tap.step_voltage * slack / np.abs(slack)
        p0, q0 = data["p_fixed"], data["q_fixed"]
        # per-period injection coupling: node x local column, real p and q parts
        G, B, F = len(ders.pv), len(ders.bess), len(ders.flex)
        k_loc = lay.period_columns(0).size
        a_p = np.zeros((N, k_loc))
        a_q = np.zeros((N, k_loc))
        off = 0
        for g in ders.pv:
            a_p[net.node(g.bus, g.phase), off] = 1.0
            off += 1
        for g in ders.pv:
            a_q[net.node(g.bus, g.phase), off] = 1.0
            off += 1
        for b in ders.bess:
            a_p[net.node(b.bus, b.phase), off] = -1.0
            off += 1
        for b in ders.bess:
            a_p[net.node(b.bus, b.phase), off] = 1.0
            off += 1
        for b in ders.bess:
            a_q[net.node(b.bus, b.phase), off] = 1.0
            off += 1
        for f in ders.flex:
            i = net.node(f.bus, f.phase)
            a_p[i, off] = -f.p_shift / base
            a_q[i, off] = -f.p_shift / base * np.tan(np.arccos(f.power_factor))
            off += 1
        a_s = a_p - 1j * a_q  # conj of injection per unit of each column
        cols = np.array([lay.period_columns(t) for t in range(T)])  # (T, k)
        self.cols = cols
        self.c_v = np.zeros((T, N), dtype=complex)
        self.e_v = np.zeros((T, N, k_loc), dtype=complex)
        self.c_i = np.zeros((T, N), dtype=complex)
        self.e_i = np.zeros((T, N, k_loc), dtype=complex)
        for t in range(T):
            w = 1.0 / np.conj(v_bar[t])
            s0c = (p0[t] - 1j * q0[t]) / base
            i0 = w * s0c
            m_inj = w[:, None] * a_s
            if lay.tap_var:
                m_inj[:, -1] = 0.0
            self.c_i[t] = net.bibc @ i0
            self.e_i[t] = net.bibc @ m_inj
            self.c_v[t] = (tap_root if not lay.tap_var else slack) + net.sens @ i0
            self.e_v[t] = net.sens @ m_inj
            if lay.tap_var:
                self.e_v[t][:, -1] = tap_dir
        om_u, om_l, om_i = margins.arrays()
        flat_cols = np.repeat(cols, N, axis=0)  # (T*N, k)
        u = v_bar / np.abs(v_bar)
        rot_l = ROTATION[net.node_phase]
        fams = {}
        fams["v_upper"] = _Family(
            "v_upper", "half", flat_cols, (np.conj(u)[:, :, None] * self.e_v).reshape(T * N, -1),
            (np.conj(u) * self.c_v).ravel(), (cfg.v_max - om_u).ravel(), lay.eta_v)
        fams["v_lower"] = _Family(
            "v_lower", "half", flat_cols, (-rot_l[None, :, None] * self.e_v).reshape(T * N, -1),
            (-rot_l[None, :] * self.c_v).ravel(), (-(cfg.v_min + om_l)).ravel(), lay.eta_v)
        amp = np.broadcast_to(net.ampacity_pu, (T, N))
        fams["current"] = _Family("current", "disk", flat_cols, self.e_i.reshape(T * N, -1),
                                  self.c_i.ravel(), (amp - om_i).ravel(), lay.eta_i)
        tri = net.three_phase_buses()
        if tri:
            idx = np.array([i for _, i in tri])  # (nb, 3)
            e_neg = np.einsum("p,tbpk->tbk", NEG_SEQ, self.e_v[:, idx, :])
            c_neg = np.einsum("p,tbp->tb", NEG_SEQ, self.c_v[:, idx])
            nb = len(tri)
            fams["vuf"] = _Family("vuf", "disk", np.repeat(cols, nb, axis=0), e_neg.reshape(T * nb, -1),
                                  c_neg.ravel(), np.full(T * nb, cfg.vuf_max / 100.0), lay.eta_vuf)
        if G:
            s_pu = np.array([g.s_rated / base for g in ders.pv])
            c2 = np.stack([lay.pv_p.ravel(), lay.pv_q.ravel()], axis=1)
            fams["pv_s"] = _Family("pv_s", "disk", c2, np.tile([1.0, 1j], (c2.shape[0], 1)),
                                   np.zeros(c2.shape[0], dtype=complex), np.repeat(s_pu, T), -1)
        if B:
            smax = np.array([b.s_max / base for b in ders.bess])
            for nm, pcols in (("bess_s_ch", lay.b_ch), ("bess_s_dis", lay.b_dis)):
                c2 = np.stack([pcols.ravel(), lay.b_q.ravel()], axis=1)
                fams[nm] = _Family(nm, "disk", c2, np.tile([1.0, 1j], (c2.shape[0], 1)),
                                   np.zeros(c2.shape[0], dtype=complex), np.repeat(smax, T), -1)
        self.families = fams
        # branch -> node indices, PSD resistance blocks for the loss model
        self.branch_nodes = [np.flatnonzero(net.node_branch == k) for k in range(len(net.branches))]
        self.r_blocks = []
        for k, nodes in enumerate(self.branch_nodes):
            ph = net.node_phase[nodes]
            r = np.real(net.z_abc[k])[np.ix_(ph, ph)]
            r = 0.5 * (r + r.T)
            ev, evec = np.linalg.eigh(r)
            self.r_blocks.append((evec * np.clip(ev, 0, None)) @ evec.T)

    # -- evaluation -----------------------------------------------------------
    def violations(self, fam: _Family, x):
        """Per element: (violation, best face index)."""
        z = fam.values(x)
        eta = x[fam.eta] if fam.eta >= 0 else 0.0
        if fam.kind == "half":
            return np.real(z) - fam.limit - eta, np.zeros(z.size, dtype=int)
        proj = np.real(z[:, None] * self.rot[None, :])
        face = np.argmax(proj, axis=1)
        return proj[np.arange(z.size), face] - self.cos_half * (fam.limit + eta), face

    def rows(self, fam: _Family, keys):
        """Sparse rows (data, row, col) and upper bounds for ``keys`` = [(element, face)]."""
        if not keys:
            return None
        keys = np.array(sorted(keys), dtype=int)
        e, f = keys[:, 0], keys[:, 1]
        k = fam.cols.shape[1]
        if fam.kind == "half":
            vals = np.real(fam.coef[e])
            hi = fam.limit[e] - np.real(fam.const[e])
            eta_coef = -1.0
        else:
            r = self.rot[f][:, None]
            vals = np.real(fam.coef[e] * r)
            hi = self.cos_half * fam.limit[e] - np.real(fam.const[e] * self.rot[f])
            eta_coef = -self.cos_half
        rows = np.repeat(np.arange(len(keys)), k)
        data = vals.ravel()
        colv = fam.cols[e].ravel()
        if fam.eta >= 0:
            rows = np.concatenate([rows, np.arange(len(keys))])
            data = np.concatenate([data, np.full(len(keys), eta_coef)])
            colv = np.concatenate([colv, np.full(len(keys), fam.eta)])
        return data, rows, colv, hi

    def branch_current(self, x, k, t):
        nodes = self.branch_nodes[k]
        return self.c_i[t, nodes] + self.e_i[t, nodes] @ x[self.cols[t]]

    def loss_value(self, i_vec, k):
        r = self.r_blocks[k]
        return float(np.real(np.conj(i_vec) @ r @ i_vec))


def _period_currents(prob: _Problem, x):
    """Branch currents (T, N) of the linear model at ``x``."""
    return prob.c_i + np.einsum("tnk,tk->tn", prob.e_i, x[prob.cols])


def _period_loss(prob: _Problem, i_t):
    """Network loss (pu) for one period's branch currents."""
    total = 0.0
    for k, nodes in enumerate(prob.branch_nodes):
        if nodes.size:
            total += prob.loss_value(i_t[nodes], k)
    return total


def _loss_cut_rows(prob: _Problem, cuts):
    """Tangent planes ``loss_t >= L(I0) + grad L(I0).(I(x) - I0)`` of the convex period loss."""
    data, rows, cols, hi = [], [], [], []
    r = 0
    cache = prob.__dict__.setdefault("_cut_cache", {})
    for t in sorted(cuts):
        for j, i0 in enumerate(cuts[t]):
            if (t, j) not in cache:
                coef = np.zeros(prob.cols.shape[1])
                const = 0.0
                for k, nodes in enumerate(prob.branch_nodes):
                    if nodes.size == 0:
                        continue
                    g = prob.r_blocks[k] @ i0[nodes]
                    f0 = float(np.real(np.conj(i0[nodes]) @ g))
                    coef += 2 * np.real(np.conj(g) @ prob.e_i[t, nodes])
                    const += 2 * float(np.real(np.conj(g) @ prob.c_i[t, nodes])) - f0
                cache[t, j] = (coef, const)
            coef, const = cache[t, j]
            data.extend(coef.tolist() + [-1.0])
            cols.extend(prob.cols[t].tolist() + [int(prob.lay.loss[t])])
            rows.extend([r] * (coef.size + 1))
            hi.append(-const)
            r += 1
    return data, rows, cols, hi


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------

def _day_data(net, ders, scenario, cfg):
    base = net.phase_power_base
    p0, q0 = fixed_injections(net, ders, scenario)
    avail = pv_available(ders, scenario)
    flex_lo = np.zeros((len(ders.flex), scenario.horizon))
    for k, f in enumerate(ders.flex):
        if f.p_shift > 0:
            base_f = scenario.column(f.profile)
            flex_lo[k] = np.maximum(-1.0, np.ceil(-base_f / f.p_shift - 1e-9))
    return {"p_fixed": p0, "q_fixed": q0, "avail": avail, "avail_pu": avail / base,
            "flex_lo": flex_lo}


def _check_inputs(net, ders, scenario, cfg, margins, v_bar=None):
    T = scenario.horizon
    if T != cfg.horizon:
        raise ValidationError(f"scenario horizon {T} does not match OpfConfig.horizon {cfg.horizon}")
    if abs(scenario.dt - cfg.dt) > 1e-12:
        raise ValidationError("scenario dt does not match OpfConfig.dt")
    ders.validate(net, scenario)
    shape = (T, net.n_nodes)
    for name, arr in zip(("omega_v_upper", "omega_v_lower", "omega_i"), margins.arrays()):
        if arr.shape != shape:
            raise ValidationError(f"assembly error in margins.{name}: shape {arr.shape}, expected {shape}")
    if v_bar is not None:
        if v_bar.shape != shape:
            raise ValidationError(f"assembly error in linearization point: shape {v_bar.shape}, expected {shape}")
        if np.any(np.abs(v_bar) == 0):
            raise ValidationError("linearization voltage has zero entries")


def _core_lp(net, ders, cfg, data, e_start):
    lp = LinearProgram()
    T = cfg.horizon
    lay = _Layout(lp, net, ders, T, cfg, data["avail_pu"], data["flex_lo"], e_start)
    base = net.phase_power_base
    dt = cfg.dt
    lp.offset = cfg.c_p * dt * float(np.sum(data["avail"]))
    for k, g in enumerate(ders.pv):
        for t in range(T):
            p, q, qa = lay.pv_p[k, t], lay.pv_q[k, t], lay.pv_qa[k, t]
            lp.add_row([qa, q], [1, -1], ">=", 0.0, f"pv_qabs_pos[{g.id},{t}]")
            lp.add_row([qa, q], [1, 1], ">=", 0.0, f"pv_qabs_neg[{g.id},{t}]")
            if g.q_mode == "cone":
                lp.add_row([q, p], [1, -g.tan_phi], "<=", 0.0, f"pv_cone_up[{g.id},{t}]")
                lp.add_row([q, p], [-1, -g.tan_phi], "<=", 0.0, f"pv_cone_lo[{g.id},{t}]")
    for k, b in enumerate(ders.bess):
        pmax = b.p_max / base
        e0 = b.e_start if e_start is None else e_start.get(b.id, b.e_start)
        for t in range(T):
            ch, dis, e, u = lay.b_ch[k, t], lay.b_dis[k, t], lay.b_e[k, t], lay.b_u[k, t]
            # e_t - e_{t-1} - (eta ch - dis / eta) dt base = 0
            cols = [e, ch, dis]
            vals = [1.0, -b.eta * dt * base, dt * base / b.eta]
            rhs = 0.0
            if t == 0:
                rhs = e0
            else:
                cols.append(lay.b_e[k, t - 1])
                vals.append(-1.0)
            lp.add_row(cols, vals, "=", rhs, f"bess_energy[{b.id},{t}]")
            lp.add_row([ch, u], [1.0, -pmax], "<=", 0.0, f"bess_excl_ch[{b.id},{t}]")
            lp.add_row([dis, u], [1.0, pmax], "<=", pmax, f"bess_excl_dis[{b.id},{t}]")
    for k, f in enumerate(ders.flex):
        lp.add_row(lay.f_n[k], np.ones(T), "=", 0.0, f"flex_energy[{f.id}]")
        for t in range(T):
            lp.add_row([lay.f_abs[k, t], lay.f_n[k, t]], [1, -1], ">=", 0.0, f"flex_abs_pos[{f.id},{t}]")
            lp.add_row([lay.f_abs[k, t], lay.f_n[k, t]], [1, 1], ">=", 0.0, f"flex_abs_neg[{f.id},{t}]")
    return lp, lay


def _add_prox(lp: LinearProgram, cols, center, weight):
    """Add ``weight * |x - center|`` on ``cols`` so ties between optima resolve to staying put."""
    n = len(cols)
    if n == 0:
        return
    d = lp.add_vars(n, "prox", 0.0, np.inf, weight)
    r = np.arange(n)
    rows = np.r_[r, r]
    for sign in (1.0, -1.0):
        m = sp.csr_matrix((np.r_[np.ones(n), np.full(n, -sign)], (rows, np.r_[d, cols])),
                          shape=(n, lp.n_vars))
        lp.add_block(m, -sign * center, np.inf, "prox")


def _with_rows(lp: LinearProgram, prob: _Problem, active, cuts):
    out = lp.copy()
    for name in sorted(active):
        fam = prob.families[name]
        built = prob.rows(fam, active[name])
        if built is None:
            continue
        data, rows, cols, hi = built
        m = sp.csr_matrix((data, (rows, cols)), shape=(len(hi), out.n_vars))
        out.add_block(m, -np.inf, hi, name)
    data, rows, cols, hi = _loss_cut_rows(prob, cuts)
    if hi:
        m = sp.csr_matrix((data, (rows, cols)), shape=(len(hi), out.n_vars))
        out.add_block(m, -np.inf, np.array(hi), "loss_cut")
    return out


def assemble_opf(net, ders, scenario, cfg: OpfConfig, margins: Margins | None, v_bar,
                 e_start=None):
    """Full MILP at linearization point ``v_bar`` (T, N) with every polygon face.

    Loss cuts are placed at the branch currents implied by ``v_bar``.
    Returns ``(LinearProgram, IntegerSpec)``.
    """
    margins = margins or Margins.zeros(scenario.horizon, net.n_nodes)
    v_bar = np.asarray(v_bar, dtype=complex)
    _check_inputs(net, ders, scenario, cfg, margins, v_bar)
    data = _day_data(net, ders, scenario, cfg)
    lp, lay = _core_lp(net, ders, cfg, data, e_start)
    prob = _Problem(net, ders, cfg, lay, data, v_bar, margins)
    active = {}
    for name, fam in prob.families.items():
        n_el = fam.const.size
        faces = 1 if fam.kind == "half" else cfg.polygon_sides
        active[name] = {(e, f) for e in range(n_el) for f in range(faces)}
    s_bar = -(data["p_fixed"] + 1j * data["q_fixed"]) / net.phase_power_base
    i_bar = branch_currents(net, s_bar, v_bar)
    full = _with_rows(lp, prob, active, {t: [i_bar[t]] for t in range(scenario.horizon)})
    return full, IntegerSpec(lay.integers, cap=cfg.int_cap)


def _idle_x(lay: _Layout, data, lp):
    x = np.zeros(lay.n_vars)
    x[lay.pv_p.ravel()] = np.minimum(data["avail_pu"].ravel(), np.array(lp.hi)[lay.pv_p.ravel()])
    x[lay.b_e.ravel()] = np.array(lp.lo)[lay.b_e.ravel()]
    if lay.tap_var:
        x[lay.tap] = lay.tap_fixed
    return x


# ----------------------------------------------------------------------------
# inner loop
# ----------------------------------------------------------------------------

def _solve(lp, ints, cfg):
    if cfg.backend == "native":
        return solve_milp_native(lp, ints)
    return solve_milp_highs(lp, ints, mip_rel_gap=cfg.mip_gap)


def _extract(x, lay: _Layout, ders, net):
    base = net.phase_power_base
    T = lay.T
    tap = (np.round(x[lay.tap]).astype(int) if lay.tap_var
           else np.full(T, lay.tap_fixed, dtype=int))
    sp_ = Setpoints(
        p_g=x[lay.pv_p] * base, q_g=x[lay.pv_q] * base,
        p_ch=x[lay.b_ch] * base, p_dis=x[lay.b_dis] * base, q_b=x[lay.b_q] * base,
        n_shift=np.round(x[lay.f_n]).astype(int), tap=tap)
    # clean numerical dust so exclusivity is exact
    for arr in (sp_.p_ch, sp_.p_dis):
        arr[np.abs(arr) < 1e-9] = 0.0
    e = np.zeros((len(ders.bess), T + 1))
    if len(ders.bess):
        e[:, 1:] = x[lay.b_e]
    return sp_, e


def solve_deterministic_opf(net, ders, scenario, cfg: OpfConfig, margins: Margins | None = None,
                            e_start=None, v_bar=None):
    """Inner linearize / solve / project loop for one horizon.

    Parameters
    ----------
    e_start : dict, optional
        Battery start energies (kWh) overriding ``Bess.e_start``.
    v_bar : (T, N) complex, optional
        Initial linearization point; defaults to the uncontrolled power flow.

    Returns
    -------
    OpfSolution
        Flows come from the final exact power flow.  ``converged`` is False
        when ``inner_max_iter`` was reached; the last iterate is returned.
    """
    T = scenario.horizon
    margins = margins or Margins.zeros(T, net.n_nodes)
    _check_inputs(net, ders, scenario, cfg, margins, None if v_bar is None else np.asarray(v_bar))
    data = _day_data(net, ders, scenario, cfg)
    core, lay = _core_lp(net, ders, cfg, data, e_start)
    ints = IntegerSpec(lay.integers, cap=cfg.int_cap)
    ints.validate(core)
    x_prev = _idle_x(lay, data, core)
    if v_bar is None:
        sp0, _ = _extract(x_prev, lay, ders, net)
        s0 = injections(net, ders, scenario, sp0)
        try:
            v_bar = exact_flows(net, s0, sp0.tap)
        except PowerFlowError:
            v_bar = np.array([net.root_voltage_nodes(int(r)) for r in sp0.tap])
    v_bar = np.array(v_bar, dtype=complex)
    sp0, _ = _extract(x_prev, lay, ders, net)
    i_prev = branch_currents(net, injections(net, ders, scenario, sp0), v_bar)

    int_cols = np.asarray(lay.integers, dtype=int)
    cont_cols = np.concatenate([np.ravel(c) for c in (lay.pv_p, lay.pv_q, lay.b_ch, lay.b_dis, lay.b_q)]
                               ).astype(int)
    w_prox = cfg.c_reg * cfg.dt * net.phase_power_base
    active = {}
    cuts = {t: [i_prev[t]] for t in range(T)}
    history = []
    converged = False
    sol = None
    it = 0
    for it in range(1, cfg.inner_max_iter + 1):
        prob = _Problem(net, ders, cfg, lay, data, v_bar, margins)
        # seed: faces violated or nearly binding at the previous decision
        for name, fam in prob.families.items():
            viol, face = prob.violations(fam, x_prev)
            scale = 1.0 if fam.kind == "half" else np.maximum(fam.limit, 1e-6)
            near = np.flatnonzero(viol > -cfg.seed_band * scale)
            keys = active.setdefault(name, set())
            keys.update(zip(near.tolist(), face[near].tolist()))
        # integers are frozen after a few iterations; before that, lazy rounds
        # run with the shift schedule fixed and a free solve confirms
        frozen = it > cfg.freeze_after
        fix_cols = int_cols if frozen else lay.f_n.ravel()
        fix = np.round(x_prev[fix_cols]) if fix_cols.size else None
        for _ in range(cfg.max_lazy_rounds):
            lp = _with_rows(core, prob, active, cuts)
            if it > 1:
                _add_prox(lp, cont_cols, x_prev[cont_cols], w_prox)
            if fix is not None:
                lp.lo = np.array(lp.lo, dtype=float)
                lp.hi = np.array(lp.hi, dtype=float)
                lp.lo[fix_cols] = fix
                lp.hi[fix_cols] = fix
            sol = _solve(lp, ints, cfg)
            if fix is not None and sol.status == "infeasible":
                fix, frozen = None, False
                continue
            if sol.status not in ("optimal", "iteration-limit") or not np.all(np.isfinite(sol.x)):
                raise InfeasibleError(f"OPF MILP {sol.status}: {sol.message}")
            x = sol.x
            added = 0
            for name, fam in prob.families.items():
                viol, face = prob.violations(fam, x)
                bad = np.flatnonzero(viol > cfg.lazy_tol)
                keys = active.setdefault(name, set())
                new = set(zip(bad.tolist(), face[bad].tolist())) - keys
                keys.update(new)
                added += len(new)
            i_lin = _period_currents(prob, x)
            for t in range(T):
                f = _period_loss(prob, i_lin[t])
                if x[lay.loss[t]] < f - max(cfg.lazy_tol, cfg.loss_rel_tol * f):
                    cuts[t].append(i_lin[t])
                    added += 1
            log.debug("inner %d: objective %.6f, %d rows, %d new, fixed %s",
                      it, sol.objective, lp.n_rows, added, fix is not None)
            if added:
                if fix is None and fix_cols.size:
                    fix = np.round(x[fix_cols])
                continue
            if fix is None or frozen:
                break
            fix = None
        else:
            log.warning("lazy constraint generation stopped after %d rounds", cfg.max_lazy_rounds)
        sp_, e_bat = _extract(sol.x, lay, ders, net)
        s = injections(net, ders, scenario, sp_)
        v_new = exact_flows(net, s, sp_.tap, v0=v_bar)
        i_prev = branch_currents(net, s, v_new)
        for t in range(T):
            cuts[t].append(i_prev[t])
        dv = float(np.max(np.abs(v_new - v_bar)))
        log.debug("inner %d: dv %.3e", it, dv)
        history.append({"iteration": it, "objective": sol.objective, "dv": dv})
        v_bar = v_new
        x_prev = sol.x
        if dv < cfg.inner_tol:
            converged = True
            break
    if not converged:
        log.warning("OPF inner loop did not converge in %d iterations (last dv %.3e)",
                    cfg.inner_max_iter, history[-1]["dv"])
    i_br = branch_currents(net, s, v_bar)
    flows = []
    for t in range(T):
        root = net.tap.root_voltage(int(sp_.tap[t]))
        flows.append(_result(net, v_bar[t], s[t], root, int(sp_.tap[t]), 0, True, 0.0))
    slacks = {"eta_v": float(sol.x[lay.eta_v]), "eta_i": float(sol.x[lay.eta_i]),
              "eta_vuf": float(sol.x[lay.eta_vuf])}
    out = OpfSolution(sp_, e_bat, data["avail"], slacks, flows, float(sol.objective), v_bar,
                      i_br, converged, it, ders, cfg, float(sol.objective), history)
    if len(ders.bess):
        out.e_bat[:, 0] = [b.e_start if e_start is None else e_start.get(b.id, b.e_start)
                           for b in ders.bess]
    out.loss_kw = exact_loss_kw(net, s, v_bar)
    out.objective = evaluate_objective(out, cfg)
    return out


# ----------------------------------------------------------------------------
# objective
# ----------------------------------------------------------------------------

def objective_terms(p_avail, p_g, q_g, loss_kw, dt, cfg: OpfConfig, slacks=None,
                    throughput_kw=0.0, shift_kw=0.0):
    """Cost terms in CHF: curtailment, reactive use, losses, penalties, tie-break."""
    slacks = slacks or {}
    terms = {
        "curtailment": cfg.c_p * float(np.sum(np.asarray(p_avail) - np.asarray(p_g))) * dt,
        "reactive": cfg.c_q * float(np.sum(np.abs(q_g))) * dt,
        "losses": cfg.c_p * float(np.sum(loss_kw)) * dt,
        "penalty": cfg.c_h * float(sum(slacks.get(k, 0.0) for k in ("eta_v", "eta_i", "eta_vuf"))),
        "tie_break": cfg.c_reg * (float(np.sum(throughput_kw)) + float(np.sum(shift_kw))) * dt,
    }
    return terms


def exact_loss_kw(net, s, v):
    """Total network loss per period (kW), ``sum_k Re(I_k^H Z_k I_k)``."""
    i_inj = np.conj(s / v)
    i_br = i_inj @ net.bibc.T
    loss = np.zeros(s.shape[0])
    for k in range(len(net.branches)):
        nodes = np.flatnonzero(net.node_branch == k)
        if nodes.size == 0:
            continue
        ph = net.node_phase[nodes]
        z = net.z_abc[k][np.ix_(ph, ph)]
        ib = i_br[:, nodes]
        loss += np.real(np.einsum("ti,ij,tj->t", np.conj(ib), z, ib))
    return loss * net.phase_power_base


def evaluate_objective(sol: OpfSolution, cfg: OpfConfig):
    """Recompute the objective from setpoints and exact-flow losses (CHF)."""
    sp_ = sol.setpoints
    loss = sol.loss_kw
    shift = (np.abs(sp_.n_shift) * np.array([f.p_shift for f in sol.ders.flex])[:, None]
             if sol.ders is not None and len(sol.ders.flex) else 0.0)
    terms = objective_terms(sol.p_avail, sp_.p_g, sp_.q_g, loss, cfg.dt, cfg, sol.slacks,
                            sp_.p_ch + sp_.p_dis, shift)
    return float(sum(terms.values()))
