"""Training tables built from optimal setpoints and the matching local measurements.

Every quantity is in pu on the phase power base, except the PV targets,
which are scale-free: ``p_frac`` is the dispatched share of the available
power and ``q`` the reactive power per unit of inverter rating.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError

#: local features each DER kind measures
FEATURES = {
    "pv": ("v", "p_avail"),
    "bess": ("v", "p_load", "q_load", "p_g"),
    "flex": ("v", "p_g"),
}
TARGETS = {"pv": ("p_frac", "q"), "bess": ("p", "q"), "flex": ("shift",)}


@dataclass
class SetpointDataset:
    """One row per (day, period) for a single DER."""

    der_id: str
    kind: str
    features: np.ndarray
    targets: dict
    weights: np.ndarray
    days: tuple = ()
    periods: np.ndarray = None
    feature_names: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in FEATURES:
            raise ValidationError(f"unknown DER kind {self.kind!r}")
        if not self.feature_names:
            self.feature_names = FEATURES[self.kind]
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        n = self.features.shape[0]
        if self.features.shape[1] != len(self.feature_names):
            raise ValidationError(f"{self.der_id}: {self.features.shape[1]} feature columns for "
                                  f"{len(self.feature_names)} names")
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.targets = {k: np.asarray(v, dtype=float).ravel() for k, v in self.targets.items()}
        if self.weights.size != n or any(v.size != n for v in self.targets.values()):
            raise ValidationError(f"{self.der_id}: row counts of features, targets and weights differ")
        if not np.all(np.isfinite(self.features)) or any(not np.all(np.isfinite(v)) for v in self.targets.values()):
            raise ValidationError(f"{self.der_id}: missing or non-finite values")
        if np.any(self.weights < 0):
            raise ValidationError(f"{self.der_id}: weights must be non-negative")
        self.days = tuple(self.days) if self.days else ("",) * n
        self.periods = np.zeros(n, dtype=int) if self.periods is None else np.asarray(self.periods, dtype=int)

    def __len__(self):
        return self.features.shape[0]

    def column(self, name):
        return self.features[:, self.feature_names.index(name)]

    def to_csv(self, path):
        names = list(self.targets)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["der", "kind", "day", "t", *self.feature_names, *names, "weight"])
            for r in range(len(self)):
                w.writerow([self.der_id, self.kind, self.days[r], int(self.periods[r]),
                            *(repr(float(a)) for a in self.features[r]),
                            *(repr(float(self.targets[k][r])) for k in names),
                            repr(float(self.weights[r]))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValidationError(f"{path}: empty dataset file")
        head, body = rows[0], rows[1:]
        if not body:
            raise ValidationError(f"{path}: dataset has no rows")
        kind = body[0][1]
        feats = FEATURES.get(kind)
        if feats is None:
            raise ValidationError(f"{path}: unknown DER kind {kind!r}")
        nf = len(feats)
        tnames = head[4 + nf:-1]
        try:
            data = np.array([[float(a) for a in r[4:]] for r in body])
        except ValueError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        return cls(body[0][0], kind, data[:, :nf],
                   {k: data[:, nf + j] for j, k in enumerate(tnames)}, data[:, -1],
                   tuple(r[2] for r in body), np.array([int(r[3]) for r in body]), tuple(head[4:4 + nf]))


# ----------------------------------------------------------------------------
# measurements
# ----------------------------------------------------------------------------

def local_node_loads(net, scenario):
    """Fixed load (T, N) in pu, active and reactive."""
    p, q = scenario.node_loads(net)
    return p / net.phase_power_base, q / net.phase_power_base


def pv_at_node(net, ders, pv_p):
    """Summed PV output per node (T, N) pu from unit outputs ``pv_p`` (G, T) kW."""
    T = pv_p.shape[1] if pv_p.size else 0
    out = np.zeros((T, net.n_nodes))
    for k, g in enumerate(ders.pv):
        out[:, net.node(g.bus, g.phase)] += pv_p[k]
    return out / net.phase_power_base


def local_features(kind, node, v_abs, p_load, q_load, pv_node, p_avail=None):
    """Feature row(s) of one DER at ``node`` from network-wide arrays (T, N)."""
    if kind == "pv":
        return np.column_stack([v_abs[:, node], p_avail])
    if kind == "bess":
        return np.column_stack([v_abs[:, node], p_load[:, node], q_load[:, node], pv_node[:, node]])
    if kind == "flex":
        return np.column_stack([v_abs[:, node], pv_node[:, node]])
    raise ValidationError(f"unknown DER kind {kind!r}")


def build_datasets(net, ders, scenario, solutions):
    """Training tables from OPF solutions.

    Parameters
    ----------
    scenario : ScenarioSet
        Must contain every day in ``solutions``.
    solutions : sequence of (day label, OpfSolution)

    Returns
    -------
    dict
        DER id to :class:`SetpointDataset`.
    """
    base = net.phase_power_base
    parts = {d.id: [] for d in ders.all()}
    for day, sol in solutions:
        sc = scenario.day(day)
        T = sc.horizon
        v_abs = np.abs(sol.voltages)
        p_load, q_load = local_node_loads(net, sc)
        sets = sol.setpoints
        pv_node = pv_at_node(net, ders, sets.p_g)
        periods = np.arange(T)
        for k, g in enumerate(ders.pv):
            node = net.node(g.bus, g.phase)
            avail = sol.p_avail[k]
            frac = np.where(avail > 1e-9, sets.p_g[k] / np.where(avail > 1e-9, avail, 1.0), 1.0)
            parts[g.id].append((local_features("pv", node, v_abs, p_load, q_load, pv_node, avail / base),
                                {"p_frac": np.clip(frac, 0.0, 1.0), "q": sets.q_g[k] / g.s_rated},
                                avail / base, day, periods))
        for k, b in enumerate(ders.bess):
            node = net.node(b.bus, b.phase)
            parts[b.id].append((local_features("bess", node, v_abs, p_load, q_load, pv_node),
                                {"p": (sets.p_dis[k] - sets.p_ch[k]) / base, "q": sets.q_b[k] / base},
                                np.ones(T), day, periods))
        for k, f in enumerate(ders.flex):
            node = net.node(f.bus, f.phase)
            parts[f.id].append((local_features("flex", node, v_abs, p_load, q_load, pv_node),
                                {"shift": sets.n_shift[k].astype(float)}, np.ones(T), day, periods))
    out = {}
    kinds = {**{g.id: "pv" for g in ders.pv}, **{b.id: "bess" for b in ders.bess},
             **{f.id: "flex" for f in ders.flex}}
    for der_id, rows in parts.items():
        if not rows:
            continue
        feats = np.vstack([r[0] for r in rows])
        targets = {k: np.concatenate([r[1][k] for r in rows]) for k in rows[0][1]}
        out[der_id] = SetpointDataset(der_id, kinds[der_id], feats, targets,
                                      np.concatenate([r[2] for r in rows]),
                                      tuple(d for r in rows for d in [r[3]] * len(r[4])),
                                      np.concatenate([r[4] for r in rows]))
    return out
