"""RBF-kernel C-SVM trained by SMO with second-order working set selection.

The solver minimises ``0.5 a'Qa - e'a`` subject to ``0 <= a <= C`` and
``y'a = 0`` with ``Q_ij = y_i y_j K(x_i, x_j)``, stopping when the maximal
KKT violation ``m(a) - M(a)`` drops to ``tol``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

TAU = 1e-12


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * sq_dists(A, B))


def scale_gamma(X: np.ndarray) -> float:
    """1 / (n_features * mean per-feature variance); 1.0 for constant input."""
    v = float(np.mean(X.var(axis=0)))
    return 1.0 / (X.shape[1] * v) if v > 0 else 1.0


@dataclass
class SMOResult:
    alpha: np.ndarray
    b: float
    iterations: int
    gap: float
    objective: list | None = None


def smo(K: np.ndarray, y: np.ndarray, C: float = 1.0, tol: float = 1e-3,
        max_iter: int | None = None, track_objective: bool = False) -> SMOResult:
    """Solve the dual on a precomputed kernel. ``y`` holds +1/-1."""
    n = len(y)
    y = y.astype(np.float64)
    alpha = np.zeros(n)
    G = -np.ones(n)
    diag = np.diag(K).copy()
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)
    history = [0.0] if track_objective else None
    it = 0
    gap = np.inf
    while it < max_iter:
        yG = -y * G
        up = np.where(y > 0, alpha < C, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < C)
        cand_up = np.where(up, yG, -np.inf)
        i = int(np.argmax(cand_up))
        gmax = cand_up[i]
        gmin = np.min(np.where(low, yG, np.inf))
        gap = gmax - gmin
        if gap <= tol:
            break

        Ki = K[i]
        grad_diff = gmax - yG
        quad = diag[i] + diag - 2.0 * Ki
        quad = np.where(quad > 0, quad, TAU)
        obj = np.where(low & (grad_diff > 0), -(grad_diff * grad_diff) / quad, np.inf)
        j = int(np.argmin(obj))

        ai, aj = alpha[i], alpha[j]
        Kij = Ki[j]
        q = diag[i] + diag[j] - 2.0 * Kij
        if q <= 0:
            q = TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            else:
                if ni < 0:
                    ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            else:
                if nj > C:
                    nj, ni = C, C + diff
        else:
            delta = (G[i] - G[j]) / q
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            else:
                if nj < 0:
                    nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            else:
                if ni < 0:
                    ni, nj = 0.0, total
        dai, daj = ni - ai, nj - aj
        alpha[i], alpha[j] = ni, nj
        G += y * (y[i] * dai * Ki + y[j] * daj * K[j])
        it += 1
        if history is not None:
            history.append(0.5 * float(alpha @ (1.0 - G)))
    else:
        log.warning("SMO hit max_iter=%d with KKT gap %.3g", max_iter, gap)

    yG = -y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        b = float(yG[free].mean())
    else:
        up = np.where(y > 0, alpha < C, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < C)
        b = 0.5 * (float(np.max(yG[up], initial=-np.inf)) + float(np.min(yG[low], initial=np.inf)))
        if not np.isfinite(b):
            b = 0.0
    return SMOResult(alpha, b, it, float(gap), history)


@dataclass
class SVMModel:
    support: np.ndarray
    coef: np.ndarray
    b: float
    gamma: float
    C: float

    def decision(self, X: np.ndarray) -> np.ndarray:
        if len(self.coef) == 0:
            return np.full(len(X), self.b)
        return rbf_kernel(X, self.support, self.gamma) @ self.coef + self.b


def fit_svm(X: np.ndarray, y: np.ndarray, C: float = 1.0, gamma: float | None = None,
            tol: float = 1e-3) -> SVMModel:
    """Train on labels in {+1, -1}.

    The solve always runs with the first label oriented to +1, so a
    label-flipped problem yields the exactly negated model.
    """
    y = np.asarray(y, dtype=np.float64)
    sign = 1.0 if y[0] > 0 else -1.0
    g = scale_gamma(X) if gamma is None else float(gamma)
    K = rbf_kernel(X, X, g)
    res = smo(K, sign * y, C=C, tol=tol)
    sv = res.alpha > 0
    coef = sign * (res.alpha[sv] * (sign * y[sv]))
    return SVMModel(X[sv].copy(), coef, sign * res.b, g, C)
