import math

import numpy as np
import pytest

from gridlocal.cases import two_bus_case
from gridlocal.errors import ValidationError
from gridlocal.opf import solve_deterministic_opf
from gridlocal.uncertainty import (CcConfig, ForecastErrorModel, empirical_margins, order_statistic,
                                   sample_forecast_errors, solve_cc_opf)

Z = 0.05 + 0.1j


def _scalar_voltage(s):
    v = 1.0 + 0j
    for _ in range(2000):
        nxt = 1.0 + Z * np.conj(s / v)
        if abs(nxt - v) < 1e-14:
            break
        v = nxt
    return nxt


@pytest.fixture(scope="module")
def two_bus_solution():
    net, ders, scen, cfg = two_bus_case(reactive=True, p_avail_kw=40.0)
    return net, ders, scen, cfg, solve_deterministic_opf(net, ders, scen, cfg)


def test_zero_variance_multipliers_are_one():
    draws = sample_forecast_errors(ForecastErrorModel.zero(), 50, 0, 4, 3)
    assert draws.shape == (50, 3, 4) and np.all(draws == 1.0)


def test_uniform_additive_mean():
    model = ForecastErrorModel("uniform", (-0.1, 0.1), mode="additive")
    draws = sample_forecast_errors(model, 100_000, 11)
    assert abs(draws.mean()) <= 0.002


def test_perfect_correlation_shares_draw():
    draws = sample_forecast_errors(ForecastErrorModel(), 20, 1, 3, 5)
    assert np.all(draws == draws[:, :1, :])
    indep = sample_forecast_errors(ForecastErrorModel(correlation="independent"), 20, 1, 3, 5)
    assert not np.all(indep == indep[:, :1, :])


def test_sampling_reproducible():
    a = sample_forecast_errors(ForecastErrorModel(), 100, 5, 2, 2)
    b = sample_forecast_errors(ForecastErrorModel(), 100, 5, 2, 2)
    assert np.array_equal(a, b)


def test_empirical_model_needs_samples():
    with pytest.raises(ValidationError, match="non-empty"):
        ForecastErrorModel("empirical", (), table=np.array([]))
    draws = sample_forecast_errors(ForecastErrorModel("empirical", (), table=np.array([0.1, -0.1])), 200, 0)
    assert set(np.round(draws.ravel(), 12)) <= {0.9, 1.1}


def test_order_statistic_convention():
    values = np.arange(1.0, 21.0)[:, None]
    assert order_statistic(values, 0.95)[0] == values[math.ceil(0.95 * 20) - 1, 0] == 19.0
    assert order_statistic(values, 0.05)[0] == 1.0


def test_cc_config_invariants():
    assert CcConfig().n_samples == 1000
    with pytest.raises(ValidationError, match="n_samples"):
        CcConfig(epsilon=0.05, n_samples=199)
    with pytest.raises(ValidationError):
        CcConfig(epsilon=0.5)


def test_zero_error_margins_vanish(two_bus_solution):
    net, ders, scen, cfg, sol = two_bus_solution
    model = ForecastErrorModel.zero()
    draws = sample_forecast_errors(model, 200, 0, 1, 1)
    m = empirical_margins(net, ders, scen, sol, draws, 0.05, model)
    assert m.is_zero()


def test_margin_matches_sort_oracle(two_bus_solution):
    net, ders, scen, cfg, sol = two_bus_solution
    model = ForecastErrorModel("uniform", (-0.1, 0.1))
    draws = sample_forecast_errors(model, 1000, 3, 1, 1)
    m = empirical_margins(net, ders, scen, sol, draws, 0.05, model)
    base = net.phase_power_base
    q = sol.q_g[0, 0] / base
    share = sol.p_g[0, 0] / sol.p_avail[0, 0]
    rated = ders.pv[0].s_rated
    p = np.clip(share * sol.p_avail[0, 0] * draws[:, 0, 0], 0.0, rated) / base
    vm = np.sort([abs(_scalar_voltage(pi + 1j * q)) for pi in p])
    v0 = abs(_scalar_voltage(sol.p_g[0, 0] / base + 1j * q))
    expected = vm[math.ceil(0.95 * 1000) - 1] - v0
    assert expected > 0
    assert m.omega_v_upper[0, 0] == pytest.approx(expected, abs=1e-4)


def test_margins_deterministic(two_bus_solution):
    net, ders, scen, cfg, sol = two_bus_solution
    model = ForecastErrorModel()
    draws = sample_forecast_errors(model, 500, 9, 1, 1)
    a = empirical_margins(net, ders, scen, sol, draws, 0.05, model)
    b = empirical_margins(net, ders, scen, sol, draws.copy(), 0.05, model)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)


def test_zero_variance_single_outer_iteration():
    net, ders, scen, cfg = two_bus_case(reactive=True)
    det = solve_deterministic_opf(net, ders, scen, cfg)
    sol, margins, k = solve_cc_opf(net, ders, scen, cfg, CcConfig(n_samples=200), ForecastErrorModel.zero())
    assert k == 1 and margins.is_zero()
    assert sol.objective == pytest.approx(det.objective, abs=1e-12)


def test_wider_errors_never_cheaper():
    net, ders, scen, cfg = two_bus_case(reactive=True)
    cc = CcConfig(n_samples=400, outer_tol_v=1e-4, acceleration=1.0)
    objs = [solve_cc_opf(net, ders, scen, cfg, cc, ForecastErrorModel("uniform", (-w, w)))[0].objective
            for w in (0.05, 0.15)]
    assert objs[1] >= objs[0] - 1e-6


def test_cycling_diagnostic():
    net, ders, scen, cfg = two_bus_case(reactive=True)
    cc = CcConfig(n_samples=200, outer_tol_v=1e-14, outer_tol_i=1e-14, outer_max_iter=2)
    sol, _, k = solve_cc_opf(net, ders, scen, cfg, cc, ForecastErrorModel("uniform", (-0.2, 0.2)))
    assert k == 2 and sol.outer_history[-1]["diagnostic"] == "cycling suspected"
