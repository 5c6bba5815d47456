"""Independent reference implementations used as test oracles.

Each oracle is written for clarity rather than speed and shares no code with
the package under test.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def eer_bruteforce(genuine, impostor) -> float:
    """Exhaustive threshold sweep in exact rational arithmetic.

    Thresholds: every distinct score plus one above the maximum. Accept when
    score >= t. The EER is where the piecewise-linear FAR and FRR curves
    (linear between consecutive sweep thresholds) intersect.
    """
    g = [Fraction(float(x)) for x in genuine]
    imp = [Fraction(float(x)) for x in impostor]
    ts = sorted(set(g) | set(imp))
    ts.append(ts[-1] + 1)
    far = [Fraction(sum(1 for s in imp if s >= t), len(imp)) for t in ts]
    frr = [Fraction(sum(1 for s in g if s < t), len(g)) for t in ts]
    for k in range(len(ts)):
        if far[k] == frr[k]:
            return float(far[k])
        if k and far[k - 1] > frr[k - 1] and far[k] < frr[k]:
            a1, a2, b1, b2 = far[k - 1], far[k], frr[k - 1], frr[k]
            s = (a1 - b1) / ((a1 - b1) - (a2 - b2))
            return float(a1 + s * (a2 - a1))
    raise AssertionError("no crossing found")


def knn_bruteforce(X, y, Q, k) -> np.ndarray:
    """All-pairs Euclidean distances with python loops; ties broken by index."""
    out = []
    for q in Q:
        d = [(math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(q, x))), j)
             for j, x in enumerate(X)]
        d.sort()
        out.append(sum(1 for _, j in d[:k] if y[j] > 0) / k)
    return np.array(out)


def kkt_violation(K, y, alpha, b, C) -> float:
    """Largest violation of the soft-margin KKT conditions over all points."""
    f = K @ (alpha * y) + b
    m = y * f
    worst = 0.0
    eps = 1e-12 * C
    for i in range(len(y)):
        if alpha[i] <= eps:
            v = max(0.0, 1.0 - m[i])
        elif alpha[i] >= C - eps:
            v = max(0.0, m[i] - 1.0)
        else:
            v = abs(m[i] - 1.0)
        worst = max(worst, v)
    return worst


def dual_objective(K, y, alpha) -> float:
    v = alpha * y
    return float(alpha.sum() - 0.5 * v @ K @ v)


def finite_difference(f, params: dict, eps: float = 1e-5) -> dict:
    """Central differences of scalar f(params) with respect to every entry."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + eps
            up = f(params)
            arr[idx] = old - eps
            down = f(params)
            arr[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def t_two_sided_quadrature(t: float, dof: float) -> float:
    """Two-sided tail of Student's t by high-precision numerical integration."""
    import mpmath as mp

    mp.mp.dps = 40
    nu = mp.mpf(dof)
    c = mp.gamma((nu + 1) / 2) / (mp.sqrt(nu * mp.pi) * mp.gamma(nu / 2))
    pdf = lambda x: c * (1 + x * x / nu) ** (-(nu + 1) / 2)
    return float(2 * mp.quad(pdf, [abs(mp.mpf(t)), mp.inf]))


def welch_oracle(a, b) -> float:
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1) / na
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1) / nb
    t = (ma - mb) / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va ** 2 / (na - 1) + vb ** 2 / (nb - 1))
    return t_two_sided_quadrature(t, dof)


def percentile_oracle(v, q) -> float:
    s = sorted(Fraction(float(x)) for x in v)
    pos = Fraction(q) / 100 * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return float(s[lo] + (pos - lo) * (s[hi] - s[lo]))
