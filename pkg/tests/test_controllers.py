import numpy as np
import pytest

from gridlocal.ctrl_design import (FitConfig, KernelSpec, LocalController, MultiClassSvc, PiecewiseCurve,
                                   SetpointDataset, bundle_from_json, bundle_to_json, design_controllers,
                                   fit_svr_model, load_bundle, predict, save_bundle)
from gridlocal.errors import ValidationError

SMALL = FitConfig(c_grid=(1.0, 10.0), gamma_grid=(1.0,), degree_grid=(2,))


def _datasets(n=120, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.98, 1.05, n)
    p_avail = rng.uniform(0.0, 30.0, n)
    pv = SetpointDataset("pv1", "pv", np.column_stack([v, p_avail]),
                         {"p_frac": np.clip(1 - 10 * np.maximum(v - 1.03, 0), 0, 1),
                          "q": np.clip(-8 * np.maximum(v - 1.0, 0), -1, 0)}, p_avail)
    feats = np.column_stack([v, rng.uniform(0, 0.3, n), rng.uniform(0, 0.1, n), rng.uniform(0, 1, n)])
    bess = SetpointDataset("bess1", "bess", feats, {"p": -0.2 * feats[:, 3], "q": -0.5 * (v - 1)}, np.ones(n))
    shift = np.where(feats[:, 3] > 0.6, 1, np.where(feats[:, 3] < 0.3, -1, 0))
    flex = SetpointDataset("flex1", "flex", feats[:, [0, 3]], {"shift": shift}, np.ones(n))
    return {"pv1": pv, "bess1": bess, "flex1": flex}


@pytest.fixture(scope="module")
def bundle():
    return design_controllers(_datasets(), SMALL)


def test_one_law_per_target(bundle):
    assert [(c.der_id, c.law) for c in bundle] == [
        ("bess1", "svr_pq"), ("flex1", "svc_shift"), ("pv1", "curve_p"), ("pv1", "curve_q")]


def test_bundle_round_trip_bit_exact(bundle, tmp_path):
    text = bundle_to_json(bundle)
    again = bundle_from_json(text)
    assert bundle_to_json(again) == text
    path = tmp_path / "ctrl.json"
    save_bundle(path, bundle)
    loaded = load_bundle(path)
    probe = {"v": 1.02, "p_avail": 10.0, "p_load": 0.1, "q_load": 0.05, "p_g": 0.4}
    for a, b in zip(bundle, loaded):
        assert predict(a, probe) == predict(b, probe)


def test_bundle_parse_errors():
    with pytest.raises(ValidationError, match="line 1"):
        bundle_from_json("{nope")
    with pytest.raises(ValidationError, match="version-1"):
        bundle_from_json('{"format": "other"}')


def test_predict_codomains(bundle):
    rng = np.random.default_rng(1)
    by_law = {c.law: c for c in bundle}
    for _ in range(50):
        m = {"v": rng.uniform(0.9, 1.15), "p_avail": 10.0, "p_load": rng.uniform(0, 0.3),
             "q_load": 0.05, "p_g": rng.uniform(0, 1)}
        assert predict(by_law["svc_shift"], m) in (-1, 0, 1)
        # least-squares residue of order 1e-8 is removed later by the PV envelope clamp
        assert -1e-6 <= predict(by_law["curve_p"], m) <= 1.0 + 1e-6
        assert predict(by_law["curve_q"], m) >= -1.0 - 1e-12
        assert all(np.isfinite(predict(by_law["svr_pq"], m)))


def test_pv_curves_complete_above_limit(bundle):
    by_law = {c.law: c for c in bundle}
    assert predict(by_law["curve_q"], {"v": 1.05}) == pytest.approx(-1.0)
    assert predict(by_law["curve_p"], {"v": 1.2}) == pytest.approx(0.0)


def test_curve_law_delegates():
    curve = PiecewiseCurve(0.5, 0.0, (1.0,), (-2.0,), (0.9, 1.1))
    ctrl = LocalController("pv", "curve_q", ("v",), curve)
    assert predict(ctrl, [1.05]) == curve(1.05)
    with pytest.raises(ValidationError, match="expected 1"):
        predict(ctrl, [1.0, 2.0])
    with pytest.raises(ValidationError, match="missing"):
        predict(ctrl, {"p_g": 1.0})
    with pytest.raises(ValidationError, match="uses features"):
        LocalController("pv", "curve_q", ("v", "p_g"), curve)


def test_svr_law_on_support_vectors_stays_in_tube():
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, (60, 4))
    z = np.sin(3 * x[:, 0]) * x[:, 3]
    eps = 0.01
    model = fit_svr_model(x, z, KernelSpec("rbf", 1.0), c=10.0, epsilon=eps, tol=1e-10)
    ctrl = LocalController("b", "svr_pq", ("v", "p_load", "q_load", "p_g"), {"p": model, "q": model})
    for i in range(60):
        xn = model.scaler.normalize(x[i])
        hit = np.flatnonzero(np.all(model.support_vectors == xn, axis=1))
        if hit.size and abs(model.coef[hit[0]]) < 10.0 - 1e-9:
            assert abs(predict(ctrl, x[i])[0] - z[i]) <= eps + 1e-6


def test_constant_laws_for_degenerate_data():
    ds = _datasets()
    flat = ds["flex1"]
    single = SetpointDataset("flex1", "flex", flat.features, {"shift": np.zeros(len(flat))}, flat.weights)
    (ctrl,) = design_controllers({"flex1": single}, SMALL)
    assert isinstance(ctrl.payload, MultiClassSvc) and ctrl.payload.constant == 0
    assert predict(ctrl, [1.0, 0.5]) == 0
