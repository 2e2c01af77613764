"""Backward/forward sweep power flow on a :class:`~gridlocal.network.NetworkModel`."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import PowerFlowError, ValidationError

#: Rotation bringing phases a, b, c onto the real axis (a: 0°, b: +120°, c: -120°).
ROTATION = np.array([1.0 + 0j, np.exp(2j * np.pi / 3), np.exp(-2j * np.pi / 3)])
_A = np.exp(2j * np.pi / 3)

VUF_MAX_DEFAULT = 2.0  # %, EN 50160 limit


@dataclass(frozen=True)
class VoltageState:
    """Complex node voltages (non-slack nodes, ``net.nodes`` order) plus tap."""

    v: np.ndarray
    tap_position: int = 0
    root: np.ndarray | None = None  # three slack phase voltages

    def __post_init__(self):
        v = np.asarray(self.v, dtype=complex)
        if not np.all(np.isfinite(v)) or np.any(np.abs(v) == 0):
            raise ValidationError("voltage state must be finite and non-zero")
        object.__setattr__(self, "v", v)

    @classmethod
    def flat(cls, net, tap=0):
        return cls(net.root_voltage_nodes(tap), tap, net.tap.root_voltage(tap))

    @property
    def magnitude(self):
        return np.abs(self.v)


@dataclass(frozen=True)
class InjectionState:
    """Net per-phase injections (pu, generation positive) at non-slack nodes."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValidationError("injections must be finite arrays of equal shape")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def zeros(cls, net):
        return cls(np.zeros(net.n_nodes), np.zeros(net.n_nodes))

    @property
    def s(self):
        return self.p + 1j * self.q


@dataclass(frozen=True)
class FlowResult:
    voltages: VoltageState
    branch_currents: np.ndarray  # per (branch, phase), flowing towards the slack
    branch_power_from: np.ndarray  # power into the branch at its upstream end
    branch_power_to: np.ndarray  # power into the branch at its downstream end
    iterations: int
    converged: bool
    mismatch: float
    injections: InjectionState | None = None

    @property
    def slack_power(self):
        """Complex power delivered by the slack, per slack phase (pu)."""
        return self._slack_power

    def to_csv(self, path, net):
        """Debug dump: bus, phase, |V|, angle (deg), branch loading (%)."""
        loading = 100 * np.abs(self.branch_currents) / net.ampacity_pu
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bus", "phase", "v_pu", "angle_deg", "loading_pct"])
            for i, (bus, ph) in enumerate(net.nodes):
                w.writerow([bus, ph, f"{abs(self.voltages.v[i]):.8f}",
                            f"{np.degrees(np.angle(self.voltages.v[i])):.6f}",
                            f"{loading[i]:.4f}"])


def _result(net, v, s, root, tap, iterations, converged, mismatch):
    i_inj = np.conj(s / v)
    i_br = net.bibc @ i_inj
    up = _upstream_voltage(net, v, root)
    s_from = -up * np.conj(i_br)
    s_to = v * np.conj(i_br)
    res = FlowResult(VoltageState(v, tap, root), i_br, s_from, s_to, iterations,
                     converged, mismatch, InjectionState(s.real, s.imag))
    object.__setattr__(res, "_slack_power", _slack_power(net, v, s, root))
    return res


def _upstream_voltage(net, v, root):
    """Voltage at the upstream end of each (branch, phase)."""
    up = np.empty_like(v)
    for i, (bus, ph) in enumerate(net.nodes):
        k = net.node_branch[i]
        br = net.branches[k]
        other = br.from_bus if br.to_bus == bus else br.to_bus
        if other == net.slack_bus:
            up[i] = root["abc".index(ph)]
        else:
            up[i] = v[net.node(other, ph)]
    return up


def _slack_power(net, v, s, root):
    i_br = net.bibc @ np.conj(s / v)
    out = np.zeros(3, dtype=complex)
    for i, (bus, ph) in enumerate(net.nodes):
        br = net.branches[net.node_branch[i]]
        if net.slack_bus in (br.from_bus, br.to_bus):
            k = "abc".index(ph)
            out[k] += -root[k] * np.conj(i_br[i])
    return out


def sweep_batch(net, s, root_nodes, v0=None, tol=1e-8, max_iter=100):
    """Vectorized BFS for a batch of injection vectors.

    Parameters
    ----------
    s : (B, N) complex injections
    root_nodes : (N,) or (B, N) root voltage per node
    v0 : optional initial guess, defaults to the root (flat) profile

    Returns
    -------
    v : (B, N) voltages, converged : (B,) bool, iterations : int,
    step : (B,) last voltage change
    """
    s = np.atleast_2d(np.asarray(s, dtype=complex))
    root = np.broadcast_to(root_nodes, s.shape)
    v = np.array(root if v0 is None else np.broadcast_to(v0, s.shape), dtype=complex)
    sens_t = net.sens.T
    step = np.full(s.shape[0], np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        if np.any(np.abs(v) < 1e-9):
            raise PowerFlowError("voltage collapse in sweep", float("inf"), it)
        v_new = root + np.conj(s / v) @ sens_t
        step = np.max(np.abs(v_new - v), axis=1) if s.shape[1] else np.zeros(s.shape[0])
        v = v_new
        if np.all(step < tol):
            break
    if not np.all(np.isfinite(v)):
        raise PowerFlowError("voltage collapse in sweep", float("inf"), it)
    return v, step < tol, it, step


def bfs_power_flow(net, inj: InjectionState, tap=0, tol=1e-8, max_iter=100, v0=None,
                   raise_on_fail=True):
    """Exact constant-power BFS power flow.

    Iterates ``I = conj(S/V)``, ``I_br = BIBC I``, ``V = V_root + BCBV I_br``
    until the infinity norm of the voltage update drops below ``tol``.

    Raises
    ------
    PowerFlowError
        On voltage collapse, or on non-convergence when ``raise_on_fail``.
    """
    root = net.tap.root_voltage(tap)
    root_nodes = root[net.node_phase]
    s = inj.s
    v, ok, it, step = sweep_batch(net, s[None, :], root_nodes,
                                  None if v0 is None else np.asarray(v0)[None, :],
                                  tol, max_iter)
    v = v[0]
    mismatch = float(power_mismatch(net, v, s, root_nodes))
    if not ok[0] and raise_on_fail:
        raise PowerFlowError(
            f"BFS did not converge in {max_iter} iterations (last step {step[0]:.3e}, "
            f"mismatch {mismatch:.3e})", mismatch, it)
    return _result(net, v, s, root, tap, it, bool(ok[0]), mismatch)


def power_mismatch(net, v, s, root_nodes):
    """Max |S_inj - V conj(I)| where I is the current implied by Kirchhoff's laws at V."""
    if v.size == 0:
        return 0.0
    # currents consistent with the voltage profile: solve (V - root) = sens @ I
    i_net = np.linalg.solve(net.sens, v - root_nodes)
    return np.max(np.abs(s - v * np.conj(i_net)))


def linearized_sweep(net, inj: InjectionState, v_bar: VoltageState, tap=0):
    """One backward/forward pass with injection currents frozen at ``v_bar``.

    The voltage drop term is linear in the injections for a fixed ``v_bar``.
    """
    v_lin = np.asarray(v_bar.v)
    if np.any(np.abs(v_lin) == 0):
        raise ValidationError("linearization voltage has zero entries")
    root = net.tap.root_voltage(tap)
    i_inj = np.conj(inj.s) / np.conj(v_lin)
    i_br = net.bibc @ i_inj
    v = root[net.node_phase] + net.bcbv @ i_br
    up = _upstream_voltage(net, v, root)
    res = FlowResult(VoltageState(v, tap, root), i_br, -up * np.conj(i_br), v * np.conj(i_br),
                     1, True, float("nan"), inj)
    object.__setattr__(res, "_slack_power", _slack_power(net, v, inj.s, root))
    return res


def sequence_components(v_abc):
    """Zero, positive and negative sequence of a phase triple."""
    v_abc = np.asarray(v_abc, dtype=complex)
    va, vb, vc = v_abc[..., 0], v_abc[..., 1], v_abc[..., 2]
    v0 = (va + vb + vc) / 3
    vp = (va + _A * vb + _A ** 2 * vc) / 3
    vn = (va + _A ** 2 * vb + _A * vc) / 3
    return v0, vp, vn


#: Row vector mapping (Va, Vb, Vc) to the negative-sequence voltage.
NEG_SEQ = np.array([1.0, _A ** 2, _A]) / 3


def symmetrical_vuf(v_abc):
    """Voltage unbalance factor.

    Returns ``(vuf_exact_percent, v_neg_magnitude)``; the exact ratio is
    ``nan`` when the positive sequence is below 1e-6 pu.
    """
    _, vp, vn = sequence_components(np.asarray(v_abc, dtype=complex))
    vp_abs = np.abs(vp)
    vn_abs = np.abs(vn)
    with np.errstate(divide="ignore", invalid="ignore"):
        vuf = np.where(vp_abs < 1e-6, np.nan, 100.0 * vn_abs / np.where(vp_abs < 1e-6, 1.0, vp_abs))
    if np.ndim(vuf) == 0:
        return float(vuf), float(vn_abs)
    return vuf, vn_abs


def phase_losses(flow: FlowResult, signed=False):
    """Per (branch, phase) losses ``|Re(S_from + S_to)|`` in pu.

    With ``signed=True`` the absolute value is dropped; the signed values sum
    to the exact network loss (slack import minus net consumption).
    """
    loss = np.real(flow.branch_power_from + flow.branch_power_to)
    return loss if signed else np.abs(loss)


def bus_vuf(net, v):
    """Exact VUF (%) for every three-phase non-slack bus; ``v`` is (..., N)."""
    v = np.asarray(v)
    out = []
    for _, idx in net.three_phase_buses():
        out.append(symmetrical_vuf(np.stack([v[..., i] for i in idx], axis=-1))[0])
    if not out:
        return np.zeros(v.shape[:-1] + (0,))
    return np.stack(out, axis=-1)
