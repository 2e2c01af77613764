import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridlocal.ctrl_design import (KernelSpec, Scaler, fit_binary_svc, fit_svr, fit_svr_model, fit_weighted_svc,
                                   kernel_eval, kernel_grid, solve_dual)
from gridlocal.ctrl_design.svm import CvResult, best_candidate, fold_index
from gridlocal.errors import ConvergenceError, ValidationError

from oracles import (dual_objective, kkt_gap, overlapping_binary, qp_reference, separable_three_class,
                     svr_toy_problem)


def test_kernel_examples():
    assert kernel_eval(KernelSpec("linear"), [1, 2], [3, 4]) == 11.0
    assert kernel_eval(KernelSpec("polynomial", 1.0, 0.0, 2), [1, 2], [3, 4]) == 121.0
    with pytest.raises(ValidationError, match="dimension"):
        kernel_eval(KernelSpec("linear"), [1, 2], [3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.floats(1e-3, 10.0))
def test_rbf_self_similarity(a, gamma):
    assert kernel_eval(KernelSpec("rbf", gamma), a, a) == 1.0


def test_kernel_grid_order():
    grid = kernel_grid()
    kinds = [k.kind for k, _ in grid]
    assert kinds == sorted(kinds, key=["linear", "polynomial", "rbf"].index)
    assert len(grid) == 4 + 4 * 3 * 2 + 4 * 3


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_svr_dual_matches_reference(seed):
    q, p, y, c = svr_toy_problem(seed=seed)
    res = solve_dual(q, p, y, c, tol=1e-9)
    ref, _ = qp_reference(q, p, y, c)
    assert res.converged
    assert dual_objective(q, p, res.alpha) == pytest.approx(res.objective, abs=1e-12)
    assert abs(res.objective - ref) <= 1e-6
    assert kkt_gap(q, p, y, c, res.alpha) <= 1e-5 and res.kkt_residual <= 1e-5


def test_svr_tube_fit():
    x = np.linspace(0, 1, 60)[:, None]
    z = 0.3 + 0.2 * x[:, 0]
    m = fit_svr_model(x, z, KernelSpec("linear"), c=10.0, epsilon=0.01)
    assert np.sqrt(np.mean((m.predict(x) - z) ** 2)) <= 0.01
    assert m.kkt_residual <= 1e-5


def test_svr_coefficients_in_box():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (50, 2))
    z = x[:, 0] ** 2 + rng.normal(0, 0.1, 50)
    m = fit_svr_model(x, z, KernelSpec("rbf", 1.0), c=2.0, epsilon=0.01)
    assert np.all(np.abs(m.coef) <= 2.0 + 1e-12)


def test_svr_permutation_invariance():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (40, 3))
    z = np.tanh(x @ [1.0, -0.5, 0.2])
    probe = rng.uniform(-1, 1, (25, 3))
    perm = rng.permutation(40)
    a = fit_svr_model(x, z, KernelSpec("rbf", 0.5), c=5.0, epsilon=0.01, tol=1e-10)
    b = fit_svr_model(x[perm], z[perm], KernelSpec("rbf", 0.5), c=5.0, epsilon=0.01, tol=1e-10)
    assert np.max(np.abs(a.predict(probe) - b.predict(probe))) <= 1e-8


def test_separable_classes_fully_recovered():
    x, labels = separable_three_class()
    model, _ = fit_weighted_svc(x, labels, grid=[(KernelSpec("linear"), 10.0)])
    assert np.array_equal(model.predict(x), labels)
    assert set(model.predict(np.random.default_rng(0).uniform(-3, 3, (100, 2)))) <= {-1, 0, 1}


def test_doubling_class_weight_equals_duplication():
    x, y = overlapping_binary()
    kern = KernelSpec("rbf", 0.5)
    ident = Scaler.identity(2)
    weighted = fit_binary_svc(x, y, kern, 1.0, class_c={1: 2.0, -1: 1.0}, scaler=ident, tol=1e-10)
    pos = y > 0
    dup = fit_binary_svc(np.vstack([x, x[pos]]), np.r_[y, y[pos]], kern, 1.0, scaler=ident, tol=1e-10)
    probe = np.random.default_rng(1).normal(0, 1.5, (200, 2))
    assert np.max(np.abs(weighted.decision(probe) - dup.decision(probe))) <= 1e-6
    # the duplicate pairs share the coefficient of the weighted sample
    assert weighted.bias == pytest.approx(dup.bias, abs=1e-6)


def test_degenerate_classification_inputs():
    with pytest.raises(ValidationError, match="two classes"):
        fit_weighted_svc(np.random.default_rng(0).normal(size=(60, 2)), np.zeros(60))
    labels = np.arange(60) % 2
    with pytest.raises(ValidationError, match="same features"):
        fit_weighted_svc(np.ones((60, 2)), labels)


def test_scaler_round_trip():
    x = np.random.default_rng(0).normal(3.0, [1.0, 1e-3, 50.0], (100, 3))
    x[:, 1] = 7.0
    s = Scaler.fit(x)
    assert np.max(np.abs(s.denormalize(s.normalize(x)) - x)) <= 1e-12


def test_folds_interleaved():
    assert fold_index(7, 3).tolist() == [0, 1, 2, 0, 1, 2, 0]


def test_parsimony_rule():
    lin, rbf = KernelSpec("linear"), KernelSpec("rbf")
    res = [CvResult(lin, 1.0, 0.105), CvResult(rbf, 1.0, 0.100), CvResult(rbf, 10.0, np.inf, True, "x")]
    assert best_candidate(res).kernel is rbf
    assert best_candidate(res, rel_tol=0.1).kernel is lin
    assert best_candidate(res, abs_tol=0.001).kernel is rbf
    with pytest.raises(ConvergenceError, match="no SVM candidate"):
        best_candidate(res[2:])


def test_cv_selects_and_retrains():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (60, 1))
    z = np.sin(3 * x[:, 0])
    grid = [(KernelSpec("linear"), 1.0), (KernelSpec("rbf", 1.0), 10.0)]
    model, results = fit_svr(x, z, grid, epsilon=0.01)
    assert len(results) == 2 and model.kernel.kind == "rbf"
    assert model.meta["cv_rmse"] == min(r.score for r in results)
    with pytest.raises(ValidationError, match="samples"):
        fit_svr(x[:20], z[:20], grid)
