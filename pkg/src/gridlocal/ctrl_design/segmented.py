"""Constrained segmented (piecewise-linear) regression of a setpoint on voltage.

The breakpoint search linearizes ``beta * (v - s)_+`` around the current
breakpoints, which adds one ``-gamma * I(v > s)`` column per breakpoint;
``s <- s + gamma / beta`` moves the breakpoints and the loop stops when the
weighted residual sum of squares settles.  Slopes are reparametrized per
segment so that monotonicity and slope limits become simple bounds.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from ..errors import ConvergenceError, ValidationError

log = logging.getLogger(__name__)

DIRECTIONS = ("nonincreasing", "nondecreasing", "none")


@dataclass(frozen=True)
class PiecewiseCurve:
    """Continuous piecewise-linear map ``v -> x`` with constant extrapolation.

    ``x(v) = intercept + base_slope v + sum_k slope_diffs[k] (v - breakpoints[k])_+``
    for ``v`` clipped to ``domain``.
    """

    intercept: float
    base_slope: float
    breakpoints: tuple
    slope_diffs: tuple
    domain: tuple
    direction: str = "nonincreasing"
    slope_bounds: tuple = (-20.0, 20.0)

    def __post_init__(self):
        if len(self.breakpoints) != len(self.slope_diffs):
            raise ValidationError("one slope difference per breakpoint is required")
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"unknown direction {self.direction!r}")
        if not self.domain[0] < self.domain[1]:
            raise ValidationError("curve domain must be a non-empty interval")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValidationError("breakpoints must be strictly ascending")

    @property
    def segment_slopes(self):
        return self.base_slope + np.concatenate([[0.0], np.cumsum(self.slope_diffs)])

    def __call__(self, v):
        return evaluate_curve(self, v)


def evaluate_curve(curve: PiecewiseCurve, v):
    """Curve value at ``v`` (scalar or array); saturates outside the domain."""
    vv = np.clip(np.asarray(v, dtype=float), curve.domain[0], curve.domain[1])
    out = curve.intercept + curve.base_slope * vv
    for s, b in zip(curve.breakpoints, curve.slope_diffs):
        out = out + b * np.maximum(vv - s, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def extend_tail(curve: PiecewiseCurve, floor, start=None, slope=-20.0, full_at=None):
    """Continue a non-increasing curve above its domain down to ``floor``.

    The fitted part is kept.  From ``start`` (default: the upper domain edge)
    the curve falls with ``slope``; when ``full_at`` is given the slope is
    steepened so that ``floor`` is reached no later than ``full_at``.  Between
    the domain edge and ``start`` the curve stays flat.  Curves already at or
    below ``floor`` at the edge are returned unchanged.
    """
    if slope >= 0:
        raise ValidationError("tail slope must be negative")
    lo, hi = curve.domain
    x_hi = evaluate_curve(curve, hi)
    if x_hi <= floor + 1e-12:
        return curve
    bps, diffs = list(curve.breakpoints), list(curve.slope_diffs)
    last = float(curve.segment_slopes[-1])
    start = hi if start is None else max(float(start), hi)
    if full_at is not None and full_at > start:
        slope = min(slope, (floor - x_hi) / (full_at - start))
    if start > hi:
        bps.append(hi)
        diffs.append(-last)
        last = 0.0
    bps.append(start)
    diffs.append(slope - last)
    return PiecewiseCurve(curve.intercept, curve.base_slope, tuple(bps), tuple(diffs),
                          (lo, start + (x_hi - floor) / -slope), curve.direction,
                          (min(curve.slope_bounds[0], slope), curve.slope_bounds[1]))


@dataclass(frozen=True)
class SegmentedFit:
    curve: PiecewiseCurve
    rss_history: tuple
    iterations: int
    reseeded: bool


def _basis(v, s):
    """Per-segment hinge basis: ``x = c + sum_j slope_j B_j(v)``."""
    hinge = [np.maximum(v - sk, 0.0) for sk in s]
    cols = [v - (hinge[0] if hinge else 0.0)]
    for j in range(len(s)):
        nxt = hinge[j + 1] if j + 1 < len(s) else 0.0
        cols.append(hinge[j] - nxt)
    return np.column_stack(cols)


def _slope_box(direction, slope_bounds, n_seg):
    lo, hi = float(slope_bounds[0]), float(slope_bounds[1])
    if direction == "nonincreasing":
        hi = min(hi, 0.0)
    elif direction == "nondecreasing":
        lo = max(lo, 0.0)
    if lo > hi:
        raise ValidationError("slope bounds exclude the requested monotonicity")
    return np.full(n_seg, lo), np.full(n_seg, hi)


def _solve(a, rhs, lo, hi):
    res = lsq_linear(a, rhs, bounds=(lo, hi), method="bvls", tol=1e-13, lsmr_tol=None)
    return res.x


def _fit_fixed(v, x, sw, s, box):
    """Weighted constrained fit with breakpoints fixed; returns (intercept, slopes, rss)."""
    b = _basis(v, s)
    a = np.column_stack([np.ones_like(v), b]) * sw[:, None]
    lo = np.r_[-np.inf, box[0]]
    hi = np.r_[np.inf, box[1]]
    theta = _solve(a, x * sw, lo, hi)
    r = (x - theta[0] - b @ theta[1:]) * sw
    return theta[0], theta[1:], float(r @ r)


def _fit_step(v, x, sw, s, box):
    """Linearized fit with the ``-gamma I(v > s)`` columns and the ``sum gamma^2`` penalty."""
    b = _basis(v, s)
    ind = np.column_stack([-(v > sk).astype(float) for sk in s])
    n_s = len(s)
    a = np.column_stack([np.ones_like(v), b, ind]) * sw[:, None]
    pen = np.zeros((n_s, a.shape[1]))
    pen[:, -n_s:] = np.eye(n_s)
    a = np.vstack([a, pen])
    rhs = np.r_[x * sw, np.zeros(n_s)]
    lo = np.r_[-np.inf, box[0], np.full(n_s, -np.inf)]
    hi = np.r_[np.inf, box[1], np.full(n_s, np.inf)]
    theta = _solve(a, rhs, lo, hi)
    slopes = theta[1:n_s + 2]
    gamma = theta[n_s + 2:]
    return slopes, gamma


def _initial_breakpoints(v, n_s):
    return np.quantile(v, np.arange(1, n_s + 1) / (n_s + 1))


def _valid(s, lo, hi, gap):
    return bool(np.all(s > lo + gap) and np.all(s < hi - gap) and np.all(np.diff(s) > gap))


def fit_segmented_curve(v, x, weights=None, n_s=2, direction="nonincreasing", slope_bounds=(-20.0, 20.0),
                        tol=1e-4, max_iter=100, min_gap=None):
    """Fit a monotone piecewise-linear curve with ``n_s`` breakpoints.

    Parameters
    ----------
    v, x : array_like
        Voltages (pu) and targets.
    weights : array_like, optional
        Non-negative sample weights (the PV active power); zero-weight
        samples are discarded before fitting.
    direction : {"nonincreasing", "nondecreasing", "none"}
    slope_bounds : (float, float)
        Bounds on every segment slope (pu/pu).
    tol : float
        Stop once the weighted RSS changes by less than ``tol``.

    Returns
    -------
    SegmentedFit
        The curve, the RSS of every accepted iterate (non-increasing),
        the iteration count and whether the breakpoints were re-seeded.
    """
    v = np.asarray(v, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float).ravel()
    if not (v.shape == x.shape == w.shape):
        raise ValidationError("v, x and weights must have the same length")
    if np.any(w < 0) or not np.all(np.isfinite(np.r_[v, x, w])):
        raise ValidationError("weights must be non-negative and all data finite")
    keep = w > 0
    v, x, w = v[keep], x[keep], w[keep]
    if v.size < 10 * (n_s + 2):
        raise ValidationError(f"need at least {10 * (n_s + 2)} weighted samples, got {v.size}")
    lo_v, hi_v = float(v.min()), float(v.max())
    if hi_v - lo_v <= 1e-12:
        raise ValidationError("voltage spread is zero; cannot fit a curve")
    # sorted order makes the fit independent of sample order
    order = np.lexsort((w, x, v))
    v, x, w = v[order], x[order], w[order]
    sw = np.sqrt(w)
    gap = (hi_v - lo_v) * 1e-3 if min_gap is None else min_gap
    box = _slope_box(direction, slope_bounds, n_s + 1)

    s = _initial_breakpoints(v, n_s)
    c, slopes, rss = _fit_fixed(v, x, sw, s, box)
    history = [rss]
    reseeded = False
    it = 0
    for it in range(1, max_iter + 1):
        if n_s == 0:
            break
        step_slopes, gamma = _fit_step(v, x, sw, s, box)
        diffs = np.diff(step_slopes)
        move = np.where(np.abs(diffs) > 1e-10, gamma / np.where(diffs == 0, 1.0, diffs), 0.0)
        accepted = False
        lam = 1.0
        for _ in range(30):
            cand = s + lam * move
            if _valid(cand, lo_v, hi_v, gap):
                c2, sl2, rss2 = _fit_fixed(v, x, sw, cand, box)
                if rss2 <= rss:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            if not _valid(s + move, lo_v, hi_v, gap) and not reseeded and np.max(np.abs(move)) > gap:
                # breakpoints left the data range or collided: start over once
                reseeded = True
                log.info("segmented fit: breakpoints re-seeded at iteration %d", it)
                s = _initial_breakpoints(v, n_s) + 0.5 * gap
                c, slopes, rss = _fit_fixed(v, x, sw, s, box)
                if rss > history[-1]:
                    s = _initial_breakpoints(v, n_s)
                    c, slopes, rss = _fit_fixed(v, x, sw, s, box)
                continue
            break
        change = rss - rss2
        s, c, slopes, rss = cand, c2, sl2, rss2
        history.append(rss)
        if change < tol:
            break
    else:
        log.info("segmented fit stopped at max_iter=%d", max_iter)
    if not _valid(s, lo_v, hi_v, 0.0):
        raise ConvergenceError("segmented fit: breakpoints collapsed after re-seeding")
    # express the per-segment fit as base slope plus slope differences
    b0 = float(slopes[0])
    x0 = float(c)
    diffs = np.diff(slopes)
    curve = PiecewiseCurve(x0, b0, tuple(float(a) for a in s), tuple(float(d) for d in diffs),
                           (lo_v, hi_v), direction, tuple(slope_bounds))
    return SegmentedFit(curve, tuple(history), it, reseeded)
