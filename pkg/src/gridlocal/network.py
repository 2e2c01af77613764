"""Three-phase radial feeder model, Kron reduction and BIBC/BCBV matrices.

Conventions
-----------
* Per-unit on a three-phase power base ``base_power`` (kVA) and line-to-line
  voltage base ``base_voltage`` (V).  Per-phase powers are expressed on
  ``base_power / 3`` so that ``S = V * conj(I)`` holds phase by phase.
* A *node* is an existing ``(bus, phase)`` pair of a non-slack bus.  Branch
  phases are the phases of the branch's downstream bus, so there is exactly
  one ``(branch, phase)`` entry per node and both share an index.
* Injection currents are positive for generation.  ``BIBC @ I_inj`` gives the
  branch currents flowing *towards* the slack, and the bus voltages are
  ``V = V_root + BCBV @ BIBC @ I_inj``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import ReductionError, TopologyError, ValidationError

PHASES = ("a", "b", "c")
PHASE_INDEX = {p: i for i, p in enumerate(PHASES)}


def _frozen(arr):
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grounding:
    """Neutral earthing: pole electrodes and the transformer star point (Ω)."""

    pole_ohm: float = 40.0
    transformer_ohm: float = 3.0

    def earth_path(self, adjacent_to_transformer: bool) -> float:
        """Lumped earth-return impedance in parallel with one line segment."""
        if adjacent_to_transformer:
            return self.pole_ohm + self.transformer_ohm
        return 2.0 * self.pole_ohm


def kron_reduce(primitive_z, grounding_context=None, name="branch"):
    """Eliminate the neutral/ground conductor from a primitive impedance matrix.

    Parameters
    ----------
    primitive_z : (4, 4) or (3, 3) complex array
        Phase a, b, c plus neutral.  A 3x3 input is already reduced and is
        returned unchanged (as a copy).
    grounding_context : float or None
        Earth-return impedance (Ω) in parallel with the neutral conductor.
        ``None`` treats the neutral as the only return path.
    name : str
        Used in error messages.

    Returns
    -------
    (3, 3) complex array ``Z_pp - Z_pn Z_nn^-1 Z_np``.
    """
    z = np.asarray(primitive_z, dtype=complex)
    if z.shape == (3, 3):
        return z.copy()
    if z.shape != (4, 4):
        raise ValidationError(f"{name}: primitive impedance must be 3x3 or 4x4, got {z.shape}")
    z_pp = z[:3, :3]
    z_pn = z[:3, 3:]
    z_np = z[3:, :3]
    z_nn = z[3, 3]
    if grounding_context is not None:
        z_e = complex(grounding_context)
        if z_nn + z_e == 0:
            raise ReductionError(f"non-reducible branch {name}: neutral and earth paths cancel")
        z_nn = z_nn * z_e / (z_nn + z_e)
    if abs(z_nn) < 1e-14 or not np.isfinite(z_nn):
        raise ReductionError(f"non-reducible branch {name}: singular neutral sub-block")
    return z_pp - (z_pn @ z_np) / z_nn


@dataclass(frozen=True)
class Bus:
    id: Hashable
    phases: tuple = PHASES
    kind: str = "pq"

    def __post_init__(self):
        if not self.phases or any(p not in PHASE_INDEX for p in self.phases):
            raise ValidationError(f"bus {self.id}: invalid phases {self.phases!r}")
        if self.kind not in ("slack", "pq"):
            raise ValidationError(f"bus {self.id}: unknown type {self.kind!r}")
        object.__setattr__(self, "phases", tuple(sorted(self.phases, key=PHASE_INDEX.get)))


@dataclass(frozen=True)
class BranchSpec:
    """A line segment or transformer between two buses.

    ``primitive_z`` is in Ω per km (Ω for ``length == 1`` transformer
    branches); the branch impedance is ``primitive_z * length``.
    """

    from_bus: Hashable
    to_bus: Hashable
    primitive_z: np.ndarray
    length: float
    ampacity: float
    name: str = ""

    def __post_init__(self):
        z = np.asarray(self.primitive_z, dtype=complex)
        label = self.name or f"{self.from_bus}-{self.to_bus}"
        if self.from_bus == self.to_bus:
            raise ValidationError(f"branch {label}: from_bus equals to_bus")
        if z.shape not in ((3, 3), (4, 4)):
            raise ValidationError(f"branch {label}: impedance must be 3x3 or 4x4")
        if not np.allclose(z, z.T, atol=1e-12):
            raise ValidationError(f"branch {label}: primitive impedance not symmetric")
        if not self.ampacity > 0:
            raise ValidationError(f"branch {label}: ampacity must be positive")
        if not self.length > 0:
            raise ValidationError(f"branch {label}: length must be positive")
        object.__setattr__(self, "primitive_z", _frozen(z))
        if not self.name:
            object.__setattr__(self, "name", label)


@dataclass(frozen=True)
class TapChanger:
    """Gang-operated OLTC at the slack bus."""

    step_voltage: float = 0.0
    tap_min: int = 0
    tap_max: int = 0
    slack_voltage: tuple = (1.0 + 0j, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3))

    def __post_init__(self):
        if self.tap_min > self.tap_max:
            raise ValidationError("tap_min must not exceed tap_max")
        if self.step_voltage < 0:
            raise ValidationError("step_voltage must be non-negative")
        v = tuple(complex(x) for x in self.slack_voltage)
        if len(v) != 3:
            raise ValidationError("slack_voltage needs three phase values")
        if any(not 0.9 <= abs(x) <= 1.1 for x in v):
            raise ValidationError("slack voltage magnitudes must lie in [0.9, 1.1] pu")
        object.__setattr__(self, "slack_voltage", v)

    def root_voltage(self, tap=0):
        """Slack phase voltages after shifting by ``tap`` steps (magnitude-wise)."""
        if not self.tap_min <= tap <= self.tap_max:
            raise ValidationError(f"tap {tap} outside [{self.tap_min}, {self.tap_max}]")
        v = np.array(self.slack_voltage)
        return v - self.step_voltage * tap * v / np.abs(v)


@dataclass(frozen=True)
class NetworkModel:
    """Immutable radial three-phase feeder in per-unit.

    Build instances with :meth:`NetworkModel.build`.
    """

    buses: tuple
    branches: tuple
    tap: TapChanger
    base_power: float
    base_voltage: float
    grounding: Grounding | None
    z_abc: tuple  # per-branch 3x3 pu (rows/cols for all three phases)
    nodes: tuple  # (bus_id, phase) for non-slack buses, topological order
    node_branch: np.ndarray  # branch index feeding each node
    bibc: np.ndarray
    bcbv: np.ndarray
    sens: np.ndarray  # BCBV @ BIBC
    ampacity_pu: np.ndarray  # per (branch, phase) == per node
    slack_bus: Hashable
    _index: dict = field(repr=False, compare=False)

    # ------------------------------------------------------------------ build
    @classmethod
    def build(cls, buses: Sequence[Bus], branches: Sequence[BranchSpec], tap=None,
              base_power=100.0, base_voltage=400.0, grounding=None):
        buses = tuple(buses)
        branches = tuple(branches)
        tap = tap or TapChanger()
        ids = [b.id for b in buses]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate bus ids")
        slack = [b for b in buses if b.kind == "slack"]
        if len(slack) != 1:
            raise ValidationError(f"exactly one slack bus required, found {len(slack)}")
        slack_bus = slack[0]
        if slack_bus.phases != PHASES:
            raise ValidationError("slack bus must carry all three phases")
        by_id = {b.id: b for b in buses}
        for br in branches:
            for end in (br.from_bus, br.to_bus):
                if end not in by_id:
                    raise ValidationError(f"branch {br.name}: unknown bus {end!r}")
        order, parent = _tree_order(slack_bus.id, ids, branches)

        z_base = base_voltage ** 2 / (base_power * 1e3)
        i_base = base_power * 1e3 / (np.sqrt(3) * base_voltage)
        z_abc = []
        for k, br in enumerate(branches):
            ctx = None
            if grounding is not None and br.primitive_z.shape == (4, 4):
                ctx = grounding.earth_path(br.from_bus == slack_bus.id
                                           or parent.get(br.from_bus, (None,))[0] == slack_bus.id)
            z = kron_reduce(br.primitive_z * br.length, ctx, br.name) / z_base
            if not np.all(np.isfinite(z)):
                raise ValidationError(f"branch {br.name}: non-finite reduced impedance")
            z_abc.append(_frozen(z))

        nodes = []
        node_branch = []
        for bus_id in order[1:]:
            k = parent[bus_id][1]
            br = branches[k]
            up = by_id[br.from_bus] if br.to_bus == bus_id else by_id[br.to_bus]
            for ph in by_id[bus_id].phases:
                if ph not in up.phases:
                    raise TopologyError(f"bus {bus_id} phase {ph} not fed by upstream bus {up.id}")
                nodes.append((bus_id, ph))
                node_branch.append(k)
        index = {nd: i for i, nd in enumerate(nodes)}
        n = len(nodes)

        # subtree membership via reverse topological accumulation
        children = {b: [] for b in ids}
        for bus_id in order[1:]:
            children[parent[bus_id][0]].append(bus_id)
        bibc = np.zeros((n, n))
        bcbv = np.zeros((n, n), dtype=complex)
        for bus_id in order[1:]:
            # path from root to bus_id
            path = []
            b = bus_id
            while b != slack_bus.id:
                path.append(b)
                b = parent[b][0]
            for ph in by_id[bus_id].phases:
                row = index[(bus_id, ph)]
                for hop in path:
                    # branch feeding `hop` is on the path; couple to its phases
                    k = parent[hop][1]
                    zb = z_abc[k]
                    for ph2 in by_id[hop].phases:
                        col = index[(hop, ph2)]
                        bcbv[row, col] = zb[PHASE_INDEX[ph], PHASE_INDEX[ph2]]
                    bibc[index[(hop, ph)], row] = 1.0

        amp = np.array([branches[k].ampacity / i_base for k in node_branch])
        return cls(
            buses=buses, branches=branches, tap=tap, base_power=float(base_power),
            base_voltage=float(base_voltage), grounding=grounding, z_abc=tuple(z_abc),
            nodes=tuple(nodes), node_branch=_frozen(node_branch), bibc=_frozen(bibc),
            bcbv=_frozen(bcbv), sens=_frozen(bcbv @ bibc), ampacity_pu=_frozen(amp),
            slack_bus=slack_bus.id, _index=index,
        )

    # ------------------------------------------------------------- accessors
    @property
    def n_nodes(self):
        return len(self.nodes)

    def node(self, bus, phase):
        """Index of ``(bus, phase)``; ``KeyError`` if the pair does not exist."""
        return self._index[(bus, phase)]

    def has_node(self, bus, phase):
        return (bus, phase) in self._index

    def bus(self, bus_id):
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    @property
    def node_phase(self):
        return np.array([PHASE_INDEX[p] for _, p in self.nodes])

    def root_voltage_nodes(self, tap=0):
        """Root voltage seen by every node (its own phase of the slack)."""
        return self.tap.root_voltage(tap)[self.node_phase]

    def three_phase_buses(self):
        """Non-slack buses with all three phases, with their node indices."""
        out = []
        for b in self.buses:
            if b.kind != "slack" and b.phases == PHASES:
                out.append((b.id, [self._index[(b.id, p)] for p in PHASES]))
        return out

    # per-unit conversions
    @property
    def phase_power_base(self):
        """kVA per unit of single-phase power."""
        return self.base_power / 3.0

    def kw_to_pu(self, kw):
        return np.asarray(kw) / self.phase_power_base

    def pu_to_kw(self, pu):
        return np.asarray(pu) * self.phase_power_base

    @property
    def current_base(self):
        return self.base_power * 1e3 / (np.sqrt(3) * self.base_voltage)


def _tree_order(root, ids, branches):
    """BFS order from ``root`` and parent map ``bus -> (parent_bus, branch_idx)``."""
    if len(branches) != len(ids) - 1:
        raise TopologyError(
            f"non-radial network: {len(branches)} branches for {len(ids)} buses")
    adj = {b: [] for b in ids}
    for k, br in enumerate(branches):
        adj[br.from_bus].append((br.to_bus, k))
        adj[br.to_bus].append((br.from_bus, k))
    parent = {}
    seen = {root}
    order = [root]
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v, k in adj[u]:
            if v in seen:
                if parent.get(u, (None, None))[1] != k:
                    raise TopologyError(f"non-radial network: loop through bus {v!r}")
                continue
            seen.add(v)
            parent[v] = (u, k)
            order.append(v)
            queue.append(v)
    if len(seen) != len(ids):
        missing = sorted(set(ids) - seen, key=str)
        raise TopologyError(f"non-radial network: buses not reachable from slack: {missing}")
    return order, parent


def build_topology_matrices(net: NetworkModel):
    """Return ``(BIBC, BCBV)`` of a built network (see module docstring)."""
    return np.array(net.bibc), np.array(net.bcbv)
