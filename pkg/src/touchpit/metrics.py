"""EER, ROC, confidence intervals and Welch's t-test.

Accept rule throughout: a sample is accepted when ``score >= threshold``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import DegenerateSample, EmptyScoreList, ZeroReferenceMean

Z95 = 1.96


def _as_scores(a, name) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).ravel()
    if len(a) == 0:
        raise EmptyScoreList(f"{name} score list is empty")
    return a


def far_frr_curve(genuine, impostor):
    """FAR and FRR at every distinct score plus one threshold above the maximum.

    Returns (thresholds, far, frr); far is non-increasing, frr non-decreasing.
    """
    g = np.sort(_as_scores(genuine, "genuine"))
    i = np.sort(_as_scores(impostor, "impostor"))
    distinct = np.unique(np.concatenate([g, i]))
    top = distinct[-1]
    sentinel = top + max(1.0, abs(top))
    t = np.append(distinct, sentinel)
    far = (len(i) - np.searchsorted(i, t, side="left")) / len(i)
    frr = np.searchsorted(g, t, side="left") / len(g)
    return t, far, frr


def eer(genuine, impostor) -> tuple[float, float]:
    """Equal error rate and the threshold where FAR and FRR cross.

    Between the last sweep point with FAR > FRR and the first with FAR <= FRR
    both rates are interpolated linearly; the crossing is returned.
    """
    t, far, frr = far_frr_curve(genuine, impostor)
    d = far - frr
    k = int(np.argmax(d <= 0))  # d[-1] = -1, so a crossing always exists
    if d[k] == 0:
        return float(far[k]), float(t[k])
    a1, b1, a2, b2 = far[k - 1], frr[k - 1], far[k], frr[k]
    den = (a1 - b1) + (b2 - a2)
    rate = (a1 * b2 - a2 * b1) / den
    alpha = (a1 - b1) / den
    return float(rate), float(t[k - 1] + alpha * (t[k] - t[k - 1]))


def far_frr_at(genuine, impostor, threshold: float) -> tuple[float, float]:
    g = _as_scores(genuine, "genuine")
    i = _as_scores(impostor, "impostor")
    return float(np.mean(i >= threshold)), float(np.mean(g < threshold))


def default_fpr_grid(n: int = 512) -> np.ndarray:
    return np.concatenate([[0.0], np.logspace(-3, 0, n)])


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


def roc_points(genuine, impostor) -> list[RocPoint]:
    t, far, frr = far_frr_curve(genuine, impostor)
    return [RocPoint(float(a), float(b), float(1 - c)) for a, b, c in zip(t, far, frr)]


def roc(genuine, impostor, fpr_grid=None) -> np.ndarray:
    """TPR of one user interpolated onto ``fpr_grid`` (vertical averaging input)."""
    grid = default_fpr_grid() if fpr_grid is None else np.asarray(fpr_grid, dtype=np.float64)
    _, far, frr = far_frr_curve(genuine, impostor)
    fpr, tpr = far[::-1], 1.0 - frr[::-1]
    # upper envelope at repeated FPR values
    ux, start = np.unique(fpr, return_index=True)
    uy = np.maximum.reduceat(tpr, start)
    return np.interp(grid, ux, uy)


@dataclass(frozen=True)
class MeanRoc:
    fpr: np.ndarray
    tpr_mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_users: int

    @property
    def degenerate_ci(self) -> bool:
        return self.n_users < 2


def mean_roc(curves: Sequence[np.ndarray], fpr_grid=None) -> MeanRoc:
    grid = default_fpr_grid() if fpr_grid is None else np.asarray(fpr_grid, dtype=np.float64)
    M = np.vstack(curves)
    mu = M.mean(0)
    n = len(M)
    half = Z95 * M.std(0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mu)
    return MeanRoc(grid, mu, np.clip(mu - half, 0, 1), np.clip(mu + half, 0, 1), n)


@dataclass(frozen=True)
class EerSummary:
    per_user_eer: tuple
    mean: float
    std: float
    ci95: float
    n_users: int

    def to_dict(self) -> dict:
        return {"mean_eer": self.mean, "std": self.std, "ci95": self.ci95,
                "n_users": self.n_users, "per_user_eer": list(self.per_user_eer)}


def summarize(per_user: Sequence[float]) -> EerSummary:
    v = np.asarray(per_user, dtype=np.float64)
    n = len(v)
    if n == 0:
        return EerSummary((), math.nan, math.nan, math.nan, 0)
    sd = float(v.std(ddof=1)) if n > 1 else 0.0
    return EerSummary(tuple(float(x) for x in v), float(v.mean()), sd,
                      Z95 * sd / math.sqrt(n), n)


# --- Student t distribution ---------------------------------------------------

def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    return float(special.betainc(a, b, min(max(x, 0.0), 1.0)))


def t_two_sided_p(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc(0.5 * dof, 0.5, dof / (dof + t * t))


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    p_value: float


def welch_test(a, b) -> WelchResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise DegenerateSample("each sample needs at least two values")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    if se2 == 0:
        raise DegenerateSample("both samples have zero variance")
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    dof = se2 * se2 / (va * va / (len(a) - 1) + vb * vb / (len(b) - 1))
    return WelchResult(t, float(dof), t_two_sided_p(t, dof))


def welch_t(a, b) -> float:
    """Two-sided p-value of Welch's unequal-variance t-test."""
    return welch_test(a, b).p_value


def extrapolate_std(mu_m: float, mu_ref: float, sigma_ref: float) -> float:
    """Reference spread rescaled by the ratio of mean EERs."""
    if mu_ref == 0:
        raise ZeroReferenceMean("reference mean EER is zero")
    return mu_m / mu_ref * sigma_ref


def spearman_rho(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    from scipy.stats import rankdata

    rx, ry = rankdata(x), rankdata(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    den = math.sqrt(float((rx * rx).sum() * (ry * ry).sum()))
    return float((rx * ry).sum() / den) if den > 0 else 0.0
