"""Kernel support vector regression and class-weighted classification.

Both problems are solved in their dual form

    min 0.5 a'Qa + p'a   s.t.  y'a = 0,  0 <= a_i <= C_i

by sequential minimal optimization: each step picks the maximal violating
pair with second-order working-set selection and solves the two-variable
subproblem analytically.  ``Q_ij = y_i y_j K(x_i, x_j)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError, ValidationError

log = logging.getLogger(__name__)

KINDS = ("linear", "polynomial", "rbf")
TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """``linear``: a.b; ``polynomial``: (gamma a.b + coef0)^degree; ``rbf``: exp(-gamma |a-b|^2)."""

    kind: str = "rbf"
    gamma: float = 1.0
    coef0: float = 0.0
    degree: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown kernel {self.kind!r}")
        if self.gamma <= 0:
            raise ValidationError("kernel gamma must be positive")
        if self.kind == "polynomial" and (self.degree < 1 or int(self.degree) != self.degree):
            raise ValidationError("polynomial degree must be a positive integer")

    def label(self):
        if self.kind == "linear":
            return "linear"
        if self.kind == "rbf":
            return f"rbf(gamma={self.gamma:g})"
        return f"poly(gamma={self.gamma:g},r={self.coef0:g},d={self.degree})"


def kernel_matrix(spec: KernelSpec, a, b):
    """Gram matrix ``K[i, j] = K(a_i, b_j)`` for row-sample arrays."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"kernel dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if spec.kind == "rbf":
        # direct differences keep K(a, a) exactly 1
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
        return np.exp(-spec.gamma * d2)
    dot = a @ b.T
    if spec.kind == "linear":
        return dot
    return (spec.gamma * dot + spec.coef0) ** int(spec.degree)


def kernel_eval(spec: KernelSpec, a, b):
    """Kernel value for two feature vectors."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"kernel dimension mismatch: {a.size} vs {b.size}")
    return float(kernel_matrix(spec, a[None], b[None])[0, 0])


# ----------------------------------------------------------------------------
# dual solver
# ----------------------------------------------------------------------------

@dataclass
class DualResult:
    alpha: np.ndarray
    rho: float
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool


def _violation(alpha, grad, y, c):
    """Maximal violating pair gap ``m(a) - M(a)`` (0 at a KKT point)."""
    yg = -y * grad
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    if not up.any() or not low.any():
        return 0.0
    return float(np.max(yg[up]) - np.min(yg[low]))


def solve_dual(q, p, y, c, tol=1e-5, max_iter=200000):
    """SMO for ``min 0.5 a'Qa + p'a, y'a = 0, 0 <= a <= c``.

    Returns
    -------
    DualResult
        ``kkt_residual`` is the maximal violating pair gap at exit and
        ``rho`` the offset such that the decision value is ``sum y a K - rho``.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), p.shape).copy()
    n = p.size
    if np.any(c < 0):
        raise ValidationError("box constraints must be non-negative")
    alpha = np.zeros(n)
    grad = p.copy()
    qd = np.diag(q).copy()
    it = 0
    converged = False
    for it in range(max_iter):
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        if not up.any() or not low.any():
            converged = True
            break
        cand_i = np.where(up, yg, -np.inf)
        i = int(np.argmax(cand_i))
        g_max = cand_i[i]
        g_min = np.min(np.where(low, yg, np.inf))
        if g_max - g_min < tol:
            converged = True
            break
        # second-order choice of j among violating partners
        b = g_max - yg
        quad = qd[i] + qd - 2.0 * y[i] * y * q[i]
        quad = np.where(quad > 0, quad, TAU)
        score = np.where(low & (b > 0), -(b * b) / quad, np.inf)
        j = int(np.argmin(score))
        ci, cj = c[i], c[j]
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            qc = qd[i] + qd[j] + 2 * q[i, j]
            qc = qc if qc > 0 else TAU
            delta = (-grad[i] - grad[j]) / qc
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > ci - cj:
                if ni > ci:
                    ni, nj = ci, ci - diff
            elif nj > cj:
                nj, ni = cj, cj + diff
        else:
            qc = qd[i] + qd[j] - 2 * q[i, j]
            qc = qc if qc > 0 else TAU
            delta = (grad[i] - grad[j]) / qc
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > ci:
                if ni > ci:
                    ni, nj = ci, total - ci
            elif nj < 0:
                nj, ni = 0.0, total
            if total > cj:
                if nj > cj:
                    nj, ni = cj, total - cj
            elif ni < 0:
                ni, nj = 0.0, total
        alpha[i], alpha[j] = ni, nj
        grad += q[i] * (ni - ai) + q[j] * (nj - aj)
    rho = _rho(alpha, grad, y, c)
    obj = 0.5 * float(alpha @ (grad + p))
    return DualResult(alpha, rho, obj, max(0.0, _violation(alpha, grad, y, c)), it, converged)


def _rho(alpha, grad, y, c, eps=1e-12):
    yg = y * grad
    at_ub = alpha >= c - eps
    at_lb = alpha <= eps
    free = ~at_ub & ~at_lb
    if free.any():
        return float(np.mean(yg[free]))
    ub_mask = (at_ub & (y < 0)) | (at_lb & (y > 0))
    lb_mask = (at_ub & (y > 0)) | (at_lb & (y < 0))
    ub = np.min(yg[ub_mask]) if ub_mask.any() else np.inf
    lb = np.max(yg[lb_mask]) if lb_mask.any() else -np.inf
    if not np.isfinite(ub) or not np.isfinite(lb):
        return float(ub if np.isfinite(ub) else lb if np.isfinite(lb) else 0.0)
    return float(0.5 * (ub + lb))


# ----------------------------------------------------------------------------
# models
# ----------------------------------------------------------------------------

@dataclass
class Scaler:
    """Z-score feature normalization; constant features keep unit scale."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=float)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        return cls(mean, np.where(std > 1e-12, std, 1.0))

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.mean


@dataclass
class SvmModel:
    """Kernel expansion ``f(x) = sum_i coef_i K(sv_i, z(x)) + bias``.

    ``z`` is the stored feature normalization.  ``task`` is ``"svr"`` or
    ``"svc"``; ``c_eff`` holds the per-sample box bounds used in training.
    """

    kernel: KernelSpec
    support_vectors: np.ndarray
    coef: np.ndarray
    bias: float
    c: float
    task: str
    scaler: Scaler
    epsilon: float = 0.0
    c_eff: np.ndarray = None
    kkt_residual: float = 0.0
    meta: dict = field(default_factory=dict)

    def decision(self, x):
        z = self.scaler.normalize(np.atleast_2d(x))
        if self.support_vectors.shape[0] == 0:
            return np.full(z.shape[0], self.bias)
        return kernel_matrix(self.kernel, z, self.support_vectors) @ self.coef + self.bias

    def predict(self, x):
        f = self.decision(x)
        if self.task == "svc":
            return np.where(f >= 0, 1, -1)
        return f


def _prepare(x, scaler):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValidationError("features must be finite")
    scaler = Scaler.fit(x) if scaler is None else scaler
    return x, scaler, scaler.normalize(x)


def fit_svr_model(x, z, kernel: KernelSpec, c=1.0, epsilon=0.0025, weights=None, scaler=None,
                  tol=1e-5, max_iter=200000, sv_tol=1e-12):
    """Train one epsilon-insensitive SVR on features ``x`` and targets ``z``.

    ``weights`` scale the box bound per sample; ``scaler=None`` fits a
    z-score normalization, pass :meth:`Scaler.identity` to disable it.
    """
    x, scaler, xn = _prepare(x, scaler)
    z = np.asarray(z, dtype=float).ravel()
    n = z.size
    if x.shape[0] != n:
        raise ValidationError("feature and target lengths differ")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
    k = kernel_matrix(kernel, xn, xn)
    y = np.r_[np.ones(n), -np.ones(n)]
    q = np.block([[k, -k], [-k, k]])
    p = np.r_[epsilon - z, epsilon + z]
    cc = np.r_[c * w, c * w]
    res = solve_dual(q, p, y, cc, tol, max_iter)
    beta = res.alpha[:n] - res.alpha[n:]
    keep = np.abs(beta) > sv_tol
    model = SvmModel(kernel, xn[keep], beta[keep], -res.rho, float(c), "svr", scaler, float(epsilon),
                     c * w, res.kkt_residual,
                     {"dual_objective": res.objective, "iterations": res.iterations,
                      "converged": res.converged})
    return model


def fit_binary_svc(x, labels, kernel: KernelSpec, c=1.0, class_c=None, sample_c=None, scaler=None,
                   tol=1e-5, max_iter=200000, sv_tol=1e-12):
    """Train one soft-margin SVC with labels in {-1, +1}.

    ``class_c`` maps a label to its box bound (default ``c`` for both);
    ``sample_c`` overrides the bound per sample.
    """
    x, scaler, xn = _prepare(x, scaler)
    y = np.asarray(labels, dtype=float).ravel()
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValidationError("binary labels must be -1 or +1")
    if sample_c is None:
        class_c = class_c or {}
        sample_c = np.where(y > 0, class_c.get(1, c), class_c.get(-1, c))
    k = kernel_matrix(kernel, xn, xn)
    q = (y[:, None] * y[None, :]) * k
    res = solve_dual(q, -np.ones(y.size), y, sample_c, tol, max_iter)
    coef = res.alpha * y
    keep = res.alpha > sv_tol
    return SvmModel(kernel, xn[keep], coef[keep], -res.rho, float(c), "svc", scaler, 0.0,
                    np.asarray(sample_c, dtype=float), res.kkt_residual,
                    {"dual_objective": res.objective, "iterations": res.iterations,
                     "converged": res.converged})


@dataclass
class MultiClassSvc:
    """One-vs-rest classifier over ``classes``; ``machines[c]`` separates c from the rest."""

    classes: tuple
    machines: dict
    constant: int | None = None  # set when training data held a single class

    def decision(self, x):
        x = np.atleast_2d(x)
        return np.column_stack([self.machines[c].decision(x) for c in self.classes])

    def predict(self, x):
        x = np.atleast_2d(x)
        if self.constant is not None:
            return np.full(x.shape[0], self.constant, dtype=int)
        f = self.decision(x)
        out = np.empty(x.shape[0], dtype=int)
        classes = np.asarray(self.classes)
        for r in range(x.shape[0]):
            row = f[r]
            best = np.max(row)
            winners = classes[np.abs(row - best) <= 1e-12]
            out[r] = 0 if 0 in winners else int(winners[0])
        return out


def class_box(labels, c, class_weights=None):
    """Per-sample box bounds ``c * weight(label)``; ``"balanced"`` uses ``n / (K n_k)``."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if class_weights is None:
        wmap = {k: 1.0 for k in classes}
    elif class_weights == "balanced":
        wmap = {k: labels.size / (classes.size * np.sum(labels == k)) for k in classes}
    else:
        wmap = {k: float(class_weights.get(int(k), 1.0)) for k in classes}
    return np.array([c * wmap[k] for k in labels])


def fit_multiclass_svc(x, labels, kernel: KernelSpec, c=1.0, class_weights="balanced", scaler=None,
                       tol=1e-5, max_iter=200000):
    """One-vs-rest class-weighted SVC; each sample's bound is ``c`` times its class weight."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.asarray(labels).astype(int).ravel()
    classes = tuple(int(k) for k in np.unique(labels))
    if len(classes) < 2:
        raise ValidationError("classification needs at least two classes")
    scaler = Scaler.fit(x) if scaler is None else scaler
    box = class_box(labels, c, class_weights)
    machines = {}
    for k in classes:
        y = np.where(labels == k, 1.0, -1.0)
        machines[k] = fit_binary_svc(x, y, kernel, c, sample_c=box, scaler=scaler, tol=tol,
                                     max_iter=max_iter)
    return MultiClassSvc(classes, machines)


# ----------------------------------------------------------------------------
# model selection
# ----------------------------------------------------------------------------

def kernel_grid(cs=(1.0, 10.0, 100.0, 1000.0), gammas=(0.1, 1.0, 10.0), degrees=(2, 3), coef0=0.0):
    """Candidate (kernel, C) pairs: linear, polynomial and RBF."""
    out = [(KernelSpec("linear"), c) for c in cs]
    out += [(KernelSpec("polynomial", g, coef0, d), c) for d in degrees for g in gammas for c in cs]
    out += [(KernelSpec("rbf", g), c) for g in gammas for c in cs]
    return out


def fold_index(n, folds):
    """Deterministic interleaved fold labels ``i mod folds``."""
    return np.arange(n) % folds


@dataclass
class CvResult:
    kernel: KernelSpec
    c: float
    score: float
    failed: bool = False
    message: str = ""


def cross_validate_svr(x, z, grid, folds=5, epsilon=0.0025, tol=1e-5, max_iter=50000):
    """Out-of-sample RMSE per candidate (``inf`` when a fold fails to converge)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.asarray(z, dtype=float).ravel()
    if z.size < folds * 10:
        raise ValidationError(f"need at least {folds * 10} samples for {folds}-fold validation")
    fid = fold_index(z.size, folds)
    results = []
    for kernel, c in grid:
        sq = 0.0
        failed = ""
        for f in range(folds):
            tr, te = fid != f, fid == f
            m = fit_svr_model(x[tr], z[tr], kernel, c, epsilon, tol=tol, max_iter=max_iter)
            if not m.meta["converged"]:
                failed = f"fold {f} did not converge"
                break
            sq += float(np.sum((m.predict(x[te]) - z[te]) ** 2))
        score = np.inf if failed else float(np.sqrt(sq / z.size))
        results.append(CvResult(kernel, c, score, bool(failed), failed))
    return results


def cross_validate_svc(x, labels, grid, folds=5, class_weights="balanced", tol=1e-5, max_iter=50000):
    """Out-of-sample misclassification rate per candidate."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.asarray(labels).astype(int).ravel()
    if labels.size < folds * 10:
        raise ValidationError(f"need at least {folds * 10} samples for {folds}-fold validation")
    fid = fold_index(labels.size, folds)
    results = []
    for kernel, c in grid:
        wrong = 0
        failed = ""
        for f in range(folds):
            tr, te = fid != f, fid == f
            if np.unique(labels[tr]).size < 2:
                pred = np.full(int(te.sum()), int(np.bincount(labels[tr] + 1).argmax() - 1))
            else:
                m = fit_multiclass_svc(x[tr], labels[tr], kernel, c, class_weights, tol=tol,
                                       max_iter=max_iter)
                if not all(mm.meta["converged"] for mm in m.machines.values()):
                    failed = f"fold {f} did not converge"
                    break
                pred = m.predict(x[te])
            wrong += int(np.sum(pred != labels[te]))
        score = np.inf if failed else wrong / labels.size
        results.append(CvResult(kernel, c, score, bool(failed), failed))
    return results


def best_candidate(results, rel_tol=0.0, abs_tol=0.0):
    """First candidate in grid order whose score is within tolerance of the best.

    With zero tolerances this is the lowest score, ties kept in grid order.
    Positive tolerances prefer the simpler models listed earlier in the grid.
    """
    ok = [r for r in results if not r.failed and np.isfinite(r.score)]
    if not ok:
        detail = "; ".join(f"{r.kernel.label()} C={r.c:g}: {r.message}" for r in results)
        raise ConvergenceError(f"no SVM candidate converged ({detail})")
    best = min(r.score for r in ok)
    limit = best * (1.0 + rel_tol) + abs_tol
    return next(r for r in ok if r.score <= limit)


def fit_svr(x, z, grid=None, folds=5, epsilon=0.0025, tol=1e-5, max_iter=50000, rel_tol=0.0):
    """Select kernel and C by cross-validation, then retrain on all samples.

    ``rel_tol`` accepts the first grid candidate whose RMSE is within that
    relative margin of the best one.
    """
    grid = kernel_grid() if grid is None else grid
    results = cross_validate_svr(x, z, grid, folds, epsilon, tol, max_iter)
    best = best_candidate(results, rel_tol=rel_tol)
    model = fit_svr_model(x, z, best.kernel, best.c, epsilon, tol=tol, max_iter=max_iter * 10)
    model.meta["cv_rmse"] = best.score
    return model, results


def fit_weighted_svc(x, labels, grid=None, folds=5, class_weights="balanced", tol=1e-5, max_iter=50000,
                     abs_tol=0.0):
    """Class-weighted one-vs-rest SVC with cross-validated kernel and C.

    ``abs_tol`` accepts the first grid candidate whose error rate is within
    that absolute margin of the best one.
    """
    labels = np.asarray(labels).astype(int).ravel()
    if np.unique(labels).size < 2:
        raise ValidationError("classification needs at least two classes")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.all(np.ptp(x, axis=0) == 0):
        raise ValidationError("all samples share the same features; classes are not separable")
    grid = kernel_grid() if grid is None else grid
    results = cross_validate_svc(x, labels, grid, folds, class_weights, tol, max_iter)
    best = best_candidate(results, abs_tol=abs_tol)
    model = fit_multiclass_svc(x, labels, best.kernel, best.c, class_weights, tol=tol, max_iter=max_iter * 10)
    return model, results
