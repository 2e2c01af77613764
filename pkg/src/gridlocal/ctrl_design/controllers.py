"""Local control laws, their training, and the controller bundle file.

A bundle is a JSON document::

    {"format": "gridlocal-controllers", "version": 1,
     "controllers": [{"der": id, "law": law, "features": [...], "payload": {...}}, ...]}

Curve payloads hold the piecewise-linear coefficients; SVM payloads hold
the kernel, support vectors, coefficients, bias and feature normalization.
Floats are written with ``repr`` so a load/save cycle is bit-exact.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError, ValidationError
from .dataset import FEATURES
from .segmented import PiecewiseCurve, evaluate_curve, extend_tail, fit_segmented_curve
from .svm import KernelSpec, MultiClassSvc, Scaler, SvmModel, fit_svr, fit_weighted_svc, kernel_grid

log = logging.getLogger(__name__)

LAW_FEATURES = {
    "curve_p": ("v",),
    "curve_q": ("v",),
    "svr_pq": FEATURES["bess"],
    "svc_shift": FEATURES["flex"],
}
BUNDLE_FORMAT = "gridlocal-controllers"


@dataclass(frozen=True)
class LocalController:
    """Control law of one DER.

    ``curve_p`` returns the dispatched share of available PV power,
    ``curve_q`` the reactive power per unit of rating, ``svr_pq`` the
    battery (p, q) in pu (discharge positive) and ``svc_shift`` a class in
    {-1, 0, 1}.
    """

    der_id: str
    law: str
    features: tuple
    payload: object

    def __post_init__(self):
        if self.law not in LAW_FEATURES:
            raise ValidationError(f"unknown control law {self.law!r}")
        if tuple(self.features) != LAW_FEATURES[self.law]:
            raise ValidationError(f"{self.der_id}: law {self.law} uses features {LAW_FEATURES[self.law]}")


def _vector(controller, features):
    if isinstance(features, dict):
        missing = [f for f in controller.features if f not in features]
        if missing:
            raise ValidationError(f"{controller.der_id}: missing features {missing}")
        return np.array([float(features[f]) for f in controller.features])
    vec = np.asarray(features, dtype=float).ravel()
    if vec.size != len(controller.features):
        raise ValidationError(f"{controller.der_id}: expected {len(controller.features)} features, "
                              f"got {vec.size}")
    return vec


def predict(controller: LocalController, features):
    """Evaluate a control law on one measurement (dict by name or ordered vector)."""
    x = _vector(controller, features)
    if controller.law in ("curve_p", "curve_q"):
        return float(evaluate_curve(controller.payload, x[0]))
    if controller.law == "svr_pq":
        return (float(controller.payload["p"].predict(x[None])[0]),
                float(controller.payload["q"].predict(x[None])[0]))
    return int(controller.payload.predict(x[None])[0])


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of the controller design stage."""

    n_breakpoints: int = 2
    p_direction: str = "nonincreasing"
    q_direction: str = "nonincreasing"
    slope_bounds: tuple = (-20.0, 20.0)
    rss_tol: float = 1e-4
    folds: int = 5
    svr_epsilon: float = 0.0025
    c_grid: tuple = (1.0, 10.0, 100.0, 1000.0)
    gamma_grid: tuple = (0.1, 1.0, 10.0)
    degree_grid: tuple = (2, 3)
    coef0: float = 0.0
    class_weights: object = "balanced"
    smo_tol: float = 1e-5
    cv_max_iter: int = 20000
    svr_rel_tol: float = 0.1
    svc_abs_tol: float = 0.02
    extend_curves: bool = True
    v_limit: float = 1.05
    tail_slope: float = -20.0

    def grid(self):
        return kernel_grid(self.c_grid, self.gamma_grid, self.degree_grid, self.coef0)


def _constant_curve(value, v):
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi <= lo:
        lo, hi = lo - 0.05, lo + 0.05
    return PiecewiseCurve(float(value), 0.0, (), (), (lo, hi), "none")


def _fit_curve(ds, target, direction, cfg: FitConfig):
    v = ds.column("v")
    x = ds.targets[target]
    w = ds.weights
    active = w > 0
    if active.sum() < 10 * (cfg.n_breakpoints + 2) or np.ptp(v[active]) <= 1e-9:
        value = float(np.average(x[active], weights=w[active])) if active.any() else (
            1.0 if target == "p_frac" else 0.0)
        log.info("%s: too little data for a %s curve, using constant %.4f", ds.der_id, target, value)
        return _constant_curve(value, v[active] if active.any() else v)
    if np.ptp(x[active]) <= 1e-12:
        return _constant_curve(float(x[active][0]), v[active])
    fit = fit_segmented_curve(v, x, w, cfg.n_breakpoints, direction, cfg.slope_bounds, cfg.rss_tol)
    return fit.curve


def _extend(curve, target, cfg: FitConfig):
    """Define the curve above the training voltages.

    Reactive power reaches full absorption by ``v_limit``; the active share
    stays flat up to ``v_limit`` and then falls with ``tail_slope``.
    """
    if not cfg.extend_curves or curve.direction == "nondecreasing":
        return curve
    if target == "p_frac":
        return extend_tail(curve, 0.0, start=cfg.v_limit, slope=cfg.tail_slope)
    return extend_tail(curve, -1.0, slope=cfg.tail_slope, full_at=cfg.v_limit)


def _constant_svr(value, dim):
    return SvmModel(KernelSpec("linear"), np.zeros((0, dim)), np.zeros(0), float(value), 0.0, "svr",
                    Scaler.identity(dim), meta={"constant": True})


def design_controllers(datasets, cfg: FitConfig | None = None):
    """Fit one or more laws per DER from its :class:`SetpointDataset`.

    PV units get ``curve_p`` and ``curve_q``, batteries ``svr_pq`` and
    flexible loads ``svc_shift``.  Degenerate data (constant targets or a
    single class) yield constant laws, logged at INFO level.
    """
    cfg = cfg or FitConfig()
    out = []
    for der_id in sorted(datasets):
        ds = datasets[der_id]
        if ds.kind == "pv":
            for law, tgt, direction in (("curve_p", "p_frac", cfg.p_direction), ("curve_q", "q", cfg.q_direction)):
                curve = _extend(_fit_curve(ds, tgt, direction, cfg), tgt, cfg)
                out.append(LocalController(der_id, law, ("v",), curve))
        elif ds.kind == "bess":
            models = {}
            for tgt in ("p", "q"):
                z = ds.targets[tgt]
                if np.ptp(z) <= 1e-12:
                    models[tgt] = _constant_svr(z[0], ds.features.shape[1])
                    continue
                models[tgt], _ = fit_svr(ds.features, z, cfg.grid(), cfg.folds, cfg.svr_epsilon, cfg.smo_tol,
                                         cfg.cv_max_iter, cfg.svr_rel_tol)
            out.append(LocalController(der_id, "svr_pq", FEATURES["bess"], models))
        else:
            labels = np.round(ds.targets["shift"]).astype(int)
            if np.unique(labels).size < 2:
                log.info("%s: single shift class in training data, constant law", der_id)
                model = MultiClassSvc((int(labels[0]),), {}, constant=int(labels[0]))
            else:
                try:
                    model, _ = fit_weighted_svc(ds.features, labels, cfg.grid(), cfg.folds,
                                                cfg.class_weights, cfg.smo_tol, cfg.cv_max_iter,
                                                cfg.svc_abs_tol)
                except (ValidationError, ConvergenceError) as exc:
                    major = int(np.bincount(labels + 1).argmax() - 1)
                    log.warning("%s: classifier training failed (%s); majority class %d", der_id, exc, major)
                    model = MultiClassSvc((major,), {}, constant=major)
            out.append(LocalController(der_id, "svc_shift", FEATURES["flex"], model))
    return out


# ----------------------------------------------------------------------------
# bundle file
# ----------------------------------------------------------------------------

def _floats(a):
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def _svm_to_dict(m: SvmModel):
    k = m.kernel
    return {"kernel": {"kind": k.kind, "gamma": k.gamma, "coef0": k.coef0, "degree": int(k.degree)},
            "dim": int(m.scaler.mean.size),
            "support_vectors": [_floats(r) for r in m.support_vectors],
            "coef": _floats(m.coef), "bias": float(m.bias), "c": float(m.c), "task": m.task,
            "epsilon": float(m.epsilon), "scaler_mean": _floats(m.scaler.mean),
            "scaler_scale": _floats(m.scaler.scale)}


def _svm_from_dict(d):
    k = d["kernel"]
    dim = int(d["dim"])
    sv = np.array(d["support_vectors"], dtype=float).reshape(-1, dim)
    return SvmModel(KernelSpec(k["kind"], k["gamma"], k["coef0"], k["degree"]), sv,
                    np.array(d["coef"], dtype=float), float(d["bias"]), float(d["c"]), d["task"],
                    Scaler(np.array(d["scaler_mean"]), np.array(d["scaler_scale"])), float(d["epsilon"]))


def _payload_to_dict(c: LocalController):
    p = c.payload
    if c.law in ("curve_p", "curve_q"):
        return {"intercept": p.intercept, "base_slope": p.base_slope, "breakpoints": list(p.breakpoints),
                "slope_diffs": list(p.slope_diffs), "domain": list(p.domain), "direction": p.direction,
                "slope_bounds": list(p.slope_bounds)}
    if c.law == "svr_pq":
        return {"p": _svm_to_dict(p["p"]), "q": _svm_to_dict(p["q"])}
    return {"classes": list(p.classes), "constant": p.constant,
            "machines": {str(k): _svm_to_dict(m) for k, m in sorted(p.machines.items())}}


def _payload_from_dict(law, d):
    if law in ("curve_p", "curve_q"):
        return PiecewiseCurve(d["intercept"], d["base_slope"], tuple(d["breakpoints"]), tuple(d["slope_diffs"]),
                              tuple(d["domain"]), d["direction"], tuple(d["slope_bounds"]))
    if law == "svr_pq":
        return {"p": _svm_from_dict(d["p"]), "q": _svm_from_dict(d["q"])}
    return MultiClassSvc(tuple(int(c) for c in d["classes"]),
                         {int(k): _svm_from_dict(m) for k, m in d["machines"].items()}, d["constant"])


def bundle_to_json(controllers):
    doc = {"format": BUNDLE_FORMAT, "version": 1,
           "controllers": [{"der": c.der_id, "law": c.law, "features": list(c.features),
                            "payload": _payload_to_dict(c)} for c in controllers]}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def bundle_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"controller bundle: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if doc.get("format") != BUNDLE_FORMAT or doc.get("version") != 1:
        raise ValidationError("not a version-1 controller bundle")
    return [LocalController(c["der"], c["law"], tuple(c["features"]), _payload_from_dict(c["law"], c["payload"]))
            for c in doc["controllers"]]


def save_bundle(path, controllers):
    with open(path, "w") as fh:
        fh.write(bundle_to_json(controllers))


def load_bundle(path):
    with open(path) as fh:
        return bundle_from_json(fh.read())
