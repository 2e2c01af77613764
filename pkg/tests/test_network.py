import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridlocal.cases import cable_matrix, random_radial_network, UG1
from gridlocal.errors import ReductionError, TopologyError, ValidationError
from gridlocal.network import (PHASE_INDEX, BranchSpec, Bus, Grounding, NetworkModel, TapChanger,
                               build_topology_matrices, kron_reduce)

from conftest import random_network


def _straight_line_kron(z, z_earth=None):
    """Element-wise Z_ij - Z_in Z_nj / Z_nn."""
    znn = z[3, 3]
    if z_earth is not None:
        znn = znn * z_earth / (znn + z_earth)
    out = np.zeros((3, 3), dtype=complex)
    for i in range(3):
        for j in range(3):
            out[i, j] = z[i, j] - z[i, 3] * z[3, j] / znn
    return out


def test_kron_decoupled_block_passes_through():
    z = np.diag([1 + 1j, 1 + 1j, 1 + 1j, 2 + 0j]).astype(complex)
    z[0, 1] = z[1, 0] = 0.2j
    assert np.array_equal(kron_reduce(z), z[:3, :3])


def test_kron_matches_straight_line_formula():
    z = np.full((4, 4), 0.1 + 0j)
    np.fill_diagonal(z, [0.5 + 0.3j, 0.5 + 0.3j, 0.5 + 0.3j, 1.0 + 0j])
    z[0, 1] = z[1, 0] = z[0, 2] = z[2, 0] = z[1, 2] = z[2, 1] = 0.05 + 0.02j
    assert np.allclose(kron_reduce(z), _straight_line_kron(z), atol=1e-14)


def test_kron_with_case_study_grounding():
    g = Grounding(40.0, 3.0)
    z = cable_matrix(*UG1) * 0.035
    for adjacent, z_e in ((True, 43.0), (False, 80.0)):
        assert g.earth_path(adjacent) == z_e
        assert np.allclose(kron_reduce(z, z_e), _straight_line_kron(z, z_e), atol=1e-14)


def test_kron_three_by_three_is_idempotent():
    z = cable_matrix(*UG1)
    once = kron_reduce(z)
    assert np.array_equal(kron_reduce(once), once)
    assert np.allclose(once, once.T)


def test_kron_singular_neutral_names_branch():
    z = np.eye(4, dtype=complex)
    z[3, 3] = 0
    with pytest.raises(ReductionError, match="non-reducible branch cable7"):
        kron_reduce(z, name="cable7")


def test_single_branch_single_phase_matrices():
    net = NetworkModel.build([Bus(0, kind="slack"), Bus(1, phases=("b",))],
                             [BranchSpec(0, 1, np.eye(3) * (0.3 + 0.1j), 1.0, 100.0)])
    bibc, bcbv = build_topology_matrices(net)
    z_pu = (0.3 + 0.1j) / (400.0 ** 2 / 1e5)
    assert bibc.shape == (1, 1) and bibc[0, 0] == 1.0
    assert np.isclose(bcbv[0, 0], z_pu)


def _tree_walk_drop(net, i_inj):
    """Voltage drop per node by walking root-to-node paths and summing 3x3 Z I blocks."""
    children = {}
    for k, br in enumerate(net.branches):
        children.setdefault(br.from_bus, []).append((br.to_bus, k))
        children.setdefault(br.to_bus, []).append((br.from_bus, k))
    parent = {net.slack_bus: None}
    order = [net.slack_bus]
    for b in order:
        for c, k in children.get(b, []):
            if c not in parent:
                parent[c] = (b, k)
                order.append(c)
    sub = {b: {b} for b in order}
    for b in reversed(order[1:]):
        sub[parent[b][0]] |= sub[b]
    i_br = {}
    for b in order[1:]:
        k = parent[b][1]
        i_br[k] = np.zeros(3, dtype=complex)
        for (nb, ph), i in zip(net.nodes, i_inj):
            if nb in sub[b]:
                i_br[k][PHASE_INDEX[ph]] += i
    drop = np.zeros(net.n_nodes, dtype=complex)
    for idx, (bus, ph) in enumerate(net.nodes):
        b = bus
        while parent[b] is not None:
            k = parent[b][1]
            drop[idx] += net.z_abc[k][PHASE_INDEX[ph]] @ i_br[k]
            b = parent[b][0]
    return drop


def test_bcbv_bibc_matches_tree_walk(four_bus, rng):
    bibc, bcbv = build_topology_matrices(four_bus)
    for _ in range(10):
        i_inj = rng.normal(size=four_bus.n_nodes) + 1j * rng.normal(size=four_bus.n_nodes)
        assert np.allclose(bcbv @ bibc @ i_inj, _tree_walk_drop(four_bus, i_inj), atol=1e-10)


def test_leaf_branch_row_has_only_downstream_entries(four_bus):
    bibc, _ = build_topology_matrices(four_bus)
    for i, (bus, ph) in enumerate(four_bus.nodes):
        if bus == 3:  # leaf
            assert np.flatnonzero(bibc[i]).tolist() == [i]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_topology_properties_on_random_feeders(seed, three_phase):
    net = random_radial_network(np.random.default_rng(seed), 6, three_phase=three_phase)
    bibc, bcbv = build_topology_matrices(net)
    assert set(np.unique(bibc)) <= {0.0, 1.0}
    assert abs(np.linalg.det(bibc)) > 0.5  # unit triangular after ordering
    rng = np.random.default_rng(seed + 1)
    i_inj = rng.normal(size=net.n_nodes) + 1j * rng.normal(size=net.n_nodes)
    assert np.allclose(bcbv @ bibc @ i_inj, _tree_walk_drop(net, i_inj), atol=1e-10)


def test_meshed_network_rejected():
    z = np.eye(3) * 0.1
    buses = [Bus(0, kind="slack"), Bus(1), Bus(2)]
    branches = [BranchSpec(0, 1, z, 1, 100), BranchSpec(1, 2, z, 1, 100), BranchSpec(0, 2, z, 1, 100)]
    with pytest.raises(TopologyError, match="non-radial"):
        NetworkModel.build(buses, branches)


def test_disconnected_network_rejected():
    z = np.eye(3) * 0.1
    with pytest.raises(TopologyError):
        NetworkModel.build([Bus(0, kind="slack"), Bus(1), Bus(2)], [BranchSpec(0, 1, z, 1, 100)])


def test_lateral_phase_must_be_fed():
    z = np.eye(3) * 0.1
    with pytest.raises(TopologyError):
        NetworkModel.build([Bus(0, kind="slack"), Bus(1, phases=("a",)), Bus(2, phases=("b",))],
                           [BranchSpec(0, 1, z, 1, 100), BranchSpec(1, 2, z, 1, 100)])


@pytest.mark.parametrize("kw, msg", [
    ({"primitive_z": np.array([[1, 2, 0], [0, 1, 0], [0, 0, 1]])}, "symmetric"),
    ({"ampacity": 0.0}, "ampacity"),
    ({"to_bus": 0}, "from_bus equals to_bus"),
])
def test_branch_invariants(kw, msg):
    args = dict(from_bus=0, to_bus=1, primitive_z=np.eye(3), length=1.0, ampacity=10.0)
    args.update(kw)
    with pytest.raises(ValidationError, match=msg):
        BranchSpec(**args)


def test_tap_changer_invariants_and_gang_operation():
    with pytest.raises(ValidationError):
        TapChanger(0.01, 2, 1)
    with pytest.raises(ValidationError):
        TapChanger(-0.01)
    with pytest.raises(ValidationError):
        TapChanger(0.0, 0, 0, (1.2, 1.0, 1.0))
    tap = TapChanger(0.0125, -4, 4)
    v = tap.root_voltage(2)
    assert np.allclose(np.abs(v), 1 - 0.025)
    assert np.allclose(np.angle(v), np.angle(tap.root_voltage(0)))


def test_random_network_is_radial_and_sized():
    for seed in range(5):
        net = random_network(seed)
        assert len(net.branches) == len(net.buses) - 1
        assert net.sens.shape == (net.n_nodes, net.n_nodes)
