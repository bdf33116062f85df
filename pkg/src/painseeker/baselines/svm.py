"""Linear soft-margin SVM trained in the dual with SMO.

Minimizes 0.5 ||w||^2 + C sum_i max(0, 1 - y_i (w.x_i + b)) with an
unregularized bias. The dual min 0.5 a'Qa - sum(a), 0 <= a <= C, y'a = 0 is
solved by pairwise coordinate descent using second-order working-set
selection; every pair update lowers the dual objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DimensionMismatch, InputError, SingleClass

TAU = 1e-12


@dataclass
class LinearSVM:
    w: np.ndarray
    b: float
    C: float = 1.0
    dual_objective: list[float] = field(default_factory=list)  # per epoch, minimization form
    primal_objective: list[float] = field(default_factory=list)  # per epoch
    iterations: int = 0
    converged: bool = False

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.w.shape[0]:
            raise DimensionMismatch(f"feature length {x.shape[-1]} vs model {self.w.shape[0]}")
        return x @ self.w + self.b


def svm_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, C: float) -> float:
    margins = y * (X @ w + b)
    return float(0.5 * w @ w + C * np.maximum(0.0, 1.0 - margins).sum())


def svm_predict(model: LinearSVM, x: np.ndarray):
    """Labels in {-1, +1}; a zero decision value maps to +1."""
    d = model.decision_function(x)
    out = np.where(d >= 0, 1, -1)
    return int(out) if np.ndim(out) == 0 else out


class Standardizer:
    """Per-dimension z-score fitted on a training fold; constant dims pass through centered."""

    def __init__(self, X: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        self.mean = X.mean(0)
        std = X.std(0)
        self.std = np.where(std > 1e-12, std, 1.0)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


def _bias(alpha, y, G, C) -> float:
    yG = y * G
    upper = alpha >= C
    lower = alpha <= 0
    free = ~(upper | lower)
    if free.any():
        rho = yG[free].mean()
    else:
        ub_mask = (upper & (y < 0)) | (lower & (y > 0))
        lb_mask = (upper & (y > 0)) | (lower & (y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2
    return float(-rho)


def train_svm(X, y, C: float = 1.0, tol: float = 1e-4, max_epochs: int = 10_000,
              record_every: Optional[int] = None) -> LinearSVM:
    """Fit on features ``X`` (n x d) with labels ``y`` in {-1, +1}.

    Stops when the maximal KKT violation drops below ``tol``. One epoch is n
    pair updates; objectives are recorded at the end of each epoch, or every
    ``record_every`` updates if given.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X shape {X.shape} incompatible with {y.shape[0]} labels")
    if not np.all(np.isin(y, (-1, 1))):
        raise InputError("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise SingleClass("SVM training needs both classes")
    if C <= 0:
        raise InputError("C must be positive")
    n = len(y)
    K = X @ X.T
    Q = (y[:, None] * y[None, :]) * K
    diagK = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    model = LinearSVM(np.zeros(X.shape[1]), 0.0, C)

    def record():
        model.dual_objective.append(float(0.5 * alpha @ (G - 1.0)))
        w = (alpha * y) @ X
        model.primal_objective.append(svm_objective(w, _bias(alpha, y, G, C), X, y, C))

    it = 0
    max_iter = max_epochs * n
    every = record_every or n
    while it < max_iter:
        minus_yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            model.converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(minus_yG[up])])
        g_max = minus_yG[i]
        if g_max - minus_yG[low].min() < tol:
            model.converged = True
            break
        cand = low & (minus_yG < g_max)
        b_it = g_max - minus_yG[cand]
        a_it = diagK[i] + diagK[cand] - 2.0 * K[i, cand]
        a_it = np.where(a_it > 0, a_it, TAU)
        j = int(np.flatnonzero(cand)[np.argmin(-(b_it**2) / a_it)])

        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(Q[i, i] + Q[j, j] + 2 * Q[i, j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = max(Q[i, i] + Q[j, j] - 2 * Q[i, j], TAU)
            delta = (G[i] - G[j]) / quad
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += Q[:, i] * (ai - old_i) + Q[:, j] * (aj - old_j)
        it += 1
        if it % every == 0:
            record()
    record()
    model.iterations = it
    model.w = (alpha * y) @ X
    model.b = _bias(alpha, y, G, C)
    return model
