"""Random forest of Gini-impurity trees (bootstrap rows, sqrt feature subsample)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._rng import derive_rng


@dataclass
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray  # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # fraction of positives reaching the node

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node


def _best_split(Xn: np.ndarray, yn: np.ndarray):
    """Best (impurity, column, threshold) over the columns of Xn, or None."""
    m = len(yn)
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    ys = yn[order]
    pos_left = np.cumsum(ys, axis=0)[:-1]
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    pos_right = ys.sum(axis=0) - pos_left
    pl, pr = pos_left / n_left, pos_right / n_right
    # n_l * gini_l + n_r * gini_r with gini = 2p(1-p)
    cost = n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return None
    cost = np.where(valid, cost, np.inf)
    flat = int(np.argmin(cost))
    p, c = divmod(flat, cost.shape[1])
    lo, hi = xs[p, c], xs[p + 1, c]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return cost[p, c], c, thr


def grow_tree(X: np.ndarray, y: np.ndarray, max_features: int,
              rng: np.random.Generator) -> Tree:
    """Grow to purity; y holds 0/1."""
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        yn = y[idx]
        if len(idx) < 2 or yn.min() == yn.max():
            continue
        feats = rng.choice(d, size=max_features, replace=False)
        split = _best_split(X[np.ix_(idx, feats)], yn)
        if split is None:
            rest = np.setdiff1d(np.arange(d), feats)
            if len(rest):
                split = _best_split(X[np.ix_(idx, rest)], yn)
                feats = rest
        if split is None:
            continue
        _, col, thr = split
        f = int(feats[col])
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, float(thr)
        li, ri = idx[mask], idx[~mask]
        ln, rn = new_node(li), new_node(ri)
        left[node], right[node] = ln, rn
        stack.append((rn, ri))
        stack.append((ln, li))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value))


@dataclass
class ForestModel:
    trees: list

    def votes(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X))
        for t in self.trees:
            v = t.value[t.apply(X)]
            out += np.where(v > 0.5, 1.0, np.where(v == 0.5, 0.5, 0.0))
        return out / len(self.trees)


def fit_forest(X: np.ndarray, y: np.ndarray, n_trees: int = 100, seed: int = 0,
               max_features: int | None = None) -> ForestModel:
    """y in {+1, -1}. Tree ``t`` draws from its own stream (seed, t)."""
    n, d = X.shape
    y01 = (np.asarray(y) > 0).astype(np.float64)
    mtry = max_features or max(1, math.ceil(math.sqrt(d)))
    trees = []
    for t in range(n_trees):
        rng = derive_rng(seed, "tree", t)
        boot = rng.integers(0, n, n)
        trees.append(grow_tree(X[boot], y01[boot], mtry, rng))
    return ForestModel(trees)
