"""Monte-Carlo constraint tightening and the chance-constrained OPF loop.

PV forecast errors are sampled, the network is re-solved with the DER
setpoints held fixed, and the gap between the zero-error flows and the
empirical quantiles becomes the margin by which the deterministic OPF
tightens its voltage and current limits.  The OPF and the margin update
alternate until the margins settle.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, PowerFlowError, ValidationError
from .opf import Margins, OpfConfig, branch_currents, injections, pv_available, solve_deterministic_opf
from .powerflow import sweep_batch

log = logging.getLogger(__name__)

FAMILIES = ("uniform", "normal", "empirical", "none")


@dataclass(frozen=True)
class ForecastErrorModel:
    """Distribution of the relative PV forecast error.

    Parameters
    ----------
    family : {"uniform", "normal", "empirical", "none"}
        ``params`` is ``(low, high)`` for uniform and ``(mean, std)`` for
        normal.  ``"empirical"`` resamples rows of ``table``, shaped
        ``(rows,)`` (one pooled column) or ``(rows, T)`` (one column per
        lead time).
    mode : {"multiplicative", "additive"}
        Multiplicative errors scale the forecast by ``1 + e``; additive
        errors add ``e`` times the unit rating.
    correlation : {"perfect", "independent"}
        Under perfect correlation every PV unit shares one draw per sample.
    """

    family: str = "uniform"
    params: tuple = (-0.1, 0.1)
    mode: str = "multiplicative"
    correlation: str = "perfect"
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown error family {self.family!r}")
        if self.mode not in ("multiplicative", "additive"):
            raise ValidationError(f"unknown error mode {self.mode!r}")
        if self.correlation not in ("perfect", "independent"):
            raise ValidationError(f"unknown correlation mode {self.correlation!r}")
        if self.family == "empirical":
            table = np.asarray(self.table if self.table is not None else [], dtype=float)
            if table.size == 0:
                raise ValidationError("empirical error model needs a non-empty sample table")
            if not np.all(np.isfinite(table)):
                raise ValidationError("empirical error table has non-finite entries")
            object.__setattr__(self, "table", table)
        elif self.family == "uniform" and self.params[0] > self.params[1]:
            raise ValidationError("uniform error bounds must satisfy low <= high")
        elif self.family == "normal" and self.params[1] < 0:
            raise ValidationError("normal error std must be non-negative")

    @classmethod
    def zero(cls):
        return cls("none", ())

    @property
    def neutral(self):
        """Value of a draw that leaves the forecast unchanged."""
        return 1.0 if self.mode == "multiplicative" else 0.0


@dataclass(frozen=True)
class CcConfig:
    """Settings of the chance-constrained outer loop.

    ``acceleration`` scales the margin update once a sign flip in the
    margin change has been seen; before that the full step is taken.
    """

    epsilon: float = 0.05
    n_samples: int = 1000
    outer_tol_v: float = 1e-3
    outer_tol_i: float = 1e-3
    outer_max_iter: int = 10
    acceleration: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon < 0.5:
            raise ValidationError("epsilon must lie in (0, 0.5)")
        if self.n_samples < math.ceil(10 / self.epsilon):
            raise ValidationError(f"n_samples must be >= ceil(10/epsilon) = {math.ceil(10 / self.epsilon)}")
        if not 0 < self.acceleration <= 1:
            raise ValidationError("acceleration must lie in (0, 1]")
        if self.outer_max_iter < 1:
            raise ValidationError("outer_max_iter must be >= 1")


def sample_forecast_errors(model: ForecastErrorModel, n, seed, n_periods=1, n_units=1):
    """Draw ``n`` error samples, shape ``(n, n_units, n_periods)``.

    Values are multipliers (``1 + e``) in multiplicative mode and offsets
    (``e``, per unit of rating) in additive mode.
    """
    if n < 1:
        raise ValidationError("need at least one sample")
    rng = np.random.default_rng(seed)
    cols = 1 if model.correlation == "perfect" else n_units
    shape = (n, cols, n_periods)
    if model.family == "none":
        e = np.zeros(shape)
    elif model.family == "uniform":
        e = rng.uniform(model.params[0], model.params[1], shape)
    elif model.family == "normal":
        e = model.params[0] + model.params[1] * rng.standard_normal(shape)
    else:
        table = model.table
        rows = rng.integers(0, table.shape[0], size=shape)
        if table.ndim == 1:
            e = table[rows]
        else:
            if table.shape[1] < n_periods:
                raise ValidationError(f"error table covers {table.shape[1]} lead times, need {n_periods}")
            e = table[rows, np.arange(n_periods)[None, None, :]]
    e = np.broadcast_to(e, (n, n_units, n_periods)).copy()
    return e + model.neutral if model.mode == "multiplicative" else e


def realized_pv(model: ForecastErrorModel, ders, avail, p_set, draws):
    """Actual PV output (S, G, T) kW for forecast ``avail`` and setpoints ``p_set``.

    Curtailment acts as a fraction ``p_set / avail`` of whatever power is
    actually available, so the output moves continuously with the setpoint.
    Outputs stay within ``[0, s_rated]``.
    """
    rating = np.array([g.s_rated for g in ders.pv]).reshape(-1, 1)
    if model.mode == "multiplicative":
        raw = avail[None] * draws
    else:
        raw = avail[None] + draws * rating[None]
    safe = np.where(avail > 1e-12, avail, 1.0)
    share = np.where(avail > 1e-12, np.clip(p_set / safe, 0.0, 1.0), 1.0)
    return np.clip(share[None] * raw, 0.0, rating[None])


def order_statistic(values, q):
    """Empirical ``q`` quantile along axis 0: sorted value at 1-based index ``ceil(q n)``."""
    n = values.shape[0]
    k = min(max(math.ceil(q * n - 1e-12), 1), n)
    return np.sort(values, axis=0)[k - 1]


def sample_flows(net, ders, scenario, sol, draws, model: ForecastErrorModel):
    """Exact flows for each error sample with the DER setpoints of ``sol`` held fixed.

    Returns
    -------
    v : (S', T, N) complex, i : (S', T, N) complex, kept : (S,) bool
        Samples whose power flow does not converge are dropped.
    """
    sets = sol.setpoints
    avail = pv_available(ders, scenario)
    pv_p = realized_pv(model, ders, avail, sets.p_g, draws)
    s = injections(net, ders, scenario, sets, pv_p=pv_p)
    S, T, N = s.shape
    roots = np.array([net.root_voltage_nodes(int(r)) for r in sets.tap]).reshape(T, N)
    roots = np.broadcast_to(roots, (S, T, N)).reshape(S * T, N)
    v0 = np.broadcast_to(sol.voltages, (S, T, N)).reshape(S * T, N)
    flat = s.reshape(S * T, N)
    try:
        v, ok, _, _ = sweep_batch(net, flat, roots, v0, tol=1e-10, max_iter=200)
    except PowerFlowError:
        v = np.zeros_like(flat)
        ok = np.zeros(S * T, dtype=bool)
        for r in range(S * T):
            try:
                v[r], ok[r], _, _ = (a[0] if np.ndim(a) else a for a in
                                     sweep_batch(net, flat[r:r + 1], roots[r:r + 1], v0[r:r + 1],
                                                 tol=1e-10, max_iter=200))
            except PowerFlowError:
                ok[r] = False
    v = v.reshape(S, T, N)
    kept = ok.reshape(S, T).all(axis=1)
    cur = branch_currents(net, s[kept], v[kept])
    return v[kept], cur, kept


def empirical_margins(net, ders, scenario, sol, samples, eps, model: ForecastErrorModel,
                      max_drop=0.05):
    """Margins from the zero-error flows and the empirical quantiles of ``samples``.

    ``Omega_V_upper = V_(1-eps) - V_0``, ``Omega_V_lower = V_0 - V_(eps)`` and
    ``Omega_I = I_(1-eps) - I_0`` per (node, period), negative values clamped.
    """
    if not 0 < eps < 0.5:
        raise ValidationError("eps must lie in (0, 0.5)")
    # the zero-error reference is solved in the same batch as the samples, so a
    # degenerate error distribution gives margins that are exactly zero
    neutral = np.full((1,) + samples.shape[1:], model.neutral)
    v, cur, kept = sample_flows(net, ders, scenario, sol, np.concatenate([neutral, samples]), model)
    if not kept[0]:
        raise ConvergenceError("zero-error power flow diverged")
    v0, i0 = np.abs(v[0]), np.abs(cur[0])
    v, cur, kept = v[1:], cur[1:], kept[1:]
    dropped = int(np.sum(~kept))
    if dropped:
        frac = dropped / kept.size
        if frac > max_drop:
            raise ConvergenceError(f"{dropped} of {kept.size} sample power flows diverged")
        log.warning("dropped %d of %d diverging sample power flows", dropped, kept.size)
    vm, im = np.abs(v), np.abs(cur)
    return Margins(order_statistic(vm, 1 - eps) - v0, v0 - order_statistic(vm, eps),
                   order_statistic(im, 1 - eps) - i0)


def violation_frequency(net, ders, scenario, sol, samples, model: ForecastErrorModel, cfg: OpfConfig,
                        tol=1e-9):
    """Fraction of samples violating each raw limit, per (node, period).

    Returns a dict with arrays for ``v_upper``, ``v_lower`` and ``current``.
    """
    v, cur, _ = sample_flows(net, ders, scenario, sol, samples, model)
    vm, im = np.abs(v), np.abs(cur)
    amp = np.asarray(net.ampacity_pu)
    return {"v_upper": np.mean(vm > cfg.v_max + tol, axis=0),
            "v_lower": np.mean(vm < cfg.v_min - tol, axis=0),
            "current": np.mean(im > amp[None, None, :] + tol, axis=0)}


def _split_change(new: Margins, old: Margins):
    dv = max(float(np.max(np.abs(new.omega_v_upper - old.omega_v_upper), initial=0.0)),
             float(np.max(np.abs(new.omega_v_lower - old.omega_v_lower), initial=0.0)))
    di = float(np.max(np.abs(new.omega_i - old.omega_i), initial=0.0))
    return dv, di


def solve_cc_opf(net, ders, scenario, cfg: OpfConfig, cc: CcConfig, model: ForecastErrorModel,
                 e_start=None):
    """Alternate the deterministic OPF and the Monte-Carlo margin evaluation.

    Margins start at zero and move by ``Omega <- Omega + a (Omega_new - Omega)``,
    where ``a`` is 1 until the margin change flips sign somewhere and
    ``cc.acceleration`` afterwards.  The loop stops once the change is below
    the outer tolerances.

    Returns
    -------
    (OpfSolution, Margins, int)
        The solution for the returned margins and the outer iteration
        count.  When ``outer_max_iter`` is hit, the iterate with the
        smallest margin change is returned and its ``outer_history`` ends
        with a ``cycling suspected`` entry.
    """
    T = scenario.horizon
    draws = sample_forecast_errors(model, cc.n_samples, cc.seed, T, len(ders.pv))
    margins = Margins.zeros(T, net.n_nodes)
    history = []
    step = 1.0
    prev_delta = None
    best = None
    v_bar = None
    for k in range(1, cc.outer_max_iter + 1):
        sol = solve_deterministic_opf(net, ders, scenario, cfg, margins, e_start, v_bar)
        v_bar = sol.voltages
        new = empirical_margins(net, ders, scenario, sol, draws, cc.epsilon, model)
        dv, di = _split_change(new, margins)
        history.append({"iteration": k, "change_v": dv, "change_i": di, "objective": sol.objective,
                        "step": step})
        log.debug("outer %d: margin change v %.2e, i %.2e", k, dv, di)
        score = max(dv / cc.outer_tol_v, di / cc.outer_tol_i)
        if best is None or score < best[0]:
            best = (score, sol, margins, k)
        if dv < cc.outer_tol_v and di < cc.outer_tol_i:
            sol.outer_history = history
            return sol, margins, k
        delta = [a - b for a, b in zip(new.arrays(), margins.arrays())]
        if prev_delta is not None and step == 1.0:
            flips = any(np.any((d * p < 0) & (np.abs(d) > 1e-12)) for d, p in zip(delta, prev_delta))
            if flips:
                step = cc.acceleration
        prev_delta = delta
        margins = Margins(*(a + step * d for a, d in zip(margins.arrays(), delta)))
    _, sol, margins, k = best
    history.append({"iteration": cc.outer_max_iter, "diagnostic": "cycling suspected",
                    "best_iteration": k})
    log.warning("chance-constrained loop did not settle in %d iterations; cycling suspected",
                cc.outer_max_iter)
    sol.outer_history = history
    return sol, margins, cc.outer_max_iter
