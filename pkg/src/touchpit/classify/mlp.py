"""Feed-forward binary network: Dense -> ReLU -> BatchNorm -> Dropout per hidden layer,
sigmoid output, binary cross-entropy, Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BN_EPS = 1e-3
BN_MOMENTUM = 0.99


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(d: int, hidden=(30, 30, 15), rng=None) -> dict:
    rng = np.random.default_rng(0) if rng is None else rng
    p = {}
    sizes = (d, *hidden, 1)
    for k in range(len(sizes) - 1):
        p[f"W{k}"] = _glorot(rng, sizes[k], sizes[k + 1])
        p[f"b{k}"] = np.zeros(sizes[k + 1])
        if k < len(hidden):
            p[f"gamma{k}"] = np.ones(sizes[k + 1])
            p[f"beta{k}"] = np.zeros(sizes[k + 1])
    return p


def n_hidden(params: dict) -> int:
    return sum(1 for k in params if k.startswith("gamma"))


def forward(params, stats, X, train: bool, masks=None):
    """Returns (logits, cache). ``masks`` are inverted-dropout multipliers per
    hidden layer (None = no dropout). In inference mode batch norm uses ``stats``."""
    L = n_hidden(params)
    h = X
    cache = []
    for k in range(L):
        z = h @ params[f"W{k}"] + params[f"b{k}"]
        a = np.maximum(z, 0.0)
        if train:
            mu, var = a.mean(0), a.var(0)
        else:
            mu, var = stats[f"mean{k}"], stats[f"var{k}"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        ahat = (a - mu) * inv
        o = params[f"gamma{k}"] * ahat + params[f"beta{k}"]
        m = None if masks is None else masks[k]
        out = o if m is None else o * m
        cache.append((h, z, ahat, inv, mu, var, m))
        h = out
    logits = (h @ params[f"W{L}"] + params[f"b{L}"])[:, 0]
    cache.append(h)
    return logits, cache


def bce_loss(logits, y01):
    # mean of softplus(l) - y*l, written to stay finite for large |l|
    return float(np.mean(np.logaddexp(0.0, logits) - y01 * logits))


def backward(params, cache, logits, y01, train: bool) -> dict:
    B = len(y01)
    L = n_hidden(params)
    grads = {}
    dlog = (1.0 / (1.0 + np.exp(-logits)) - y01) / B
    h_last = cache[L]
    grads[f"W{L}"] = h_last.T @ dlog[:, None]
    grads[f"b{L}"] = np.array([dlog.sum()])
    dh = dlog[:, None] @ params[f"W{L}"].T
    for k in reversed(range(L)):
        h_in, z, ahat, inv, mu, var, m = cache[k]
        do = dh if m is None else dh * m
        grads[f"gamma{k}"] = (do * ahat).sum(0)
        grads[f"beta{k}"] = do.sum(0)
        dahat = do * params[f"gamma{k}"]
        if train:
            n = dahat.shape[0]
            da = (inv / n) * (n * dahat - dahat.sum(0) - ahat * (dahat * ahat).sum(0))
        else:
            da = dahat * inv
        dz = da * (z > 0)
        grads[f"W{k}"] = h_in.T @ dz
        grads[f"b{k}"] = dz.sum(0)
        dh = dz @ params[f"W{k}"].T
    return grads


@dataclass
class MLPModel:
    params: dict
    stats: dict = field(default_factory=dict)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        logits, _ = forward(self.params, self.stats, X, train=False)
        return 1.0 / (1.0 + np.exp(-logits))


def fit_mlp(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, hidden=(30, 30, 15),
            dropout: float = 0.3, lr: float = 1e-3, epochs: int = 50, batch: int = 32,
            beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7) -> MLPModel:
    n, d = X.shape
    y01 = (np.asarray(y) > 0).astype(np.float64)
    params = init_params(d, hidden, rng)
    stats = {}
    for k, h in enumerate(hidden):
        stats[f"mean{k}"] = np.zeros(h)
        stats[f"var{k}"] = np.ones(h)
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    keep = 1.0 - dropout
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            xb, yb = X[idx], y01[idx]
            masks = None
            if dropout > 0:
                masks = [(rng.random((len(idx), h)) < keep) / keep for h in hidden]
            logits, cache = forward(params, stats, xb, train=True, masks=masks)
            grads = backward(params, cache, logits, yb, train=True)
            for k in range(len(hidden)):
                mu, var = cache[k][4], cache[k][5]
                stats[f"mean{k}"] = BN_MOMENTUM * stats[f"mean{k}"] + (1 - BN_MOMENTUM) * mu
                stats[f"var{k}"] = BN_MOMENTUM * stats[f"var{k}"] + (1 - BN_MOMENTUM) * var
            step += 1
            c1 = 1 - beta1 ** step
            c2 = 1 - beta2 ** step
            for k, g in grads.items():
                m1[k] = beta1 * m1[k] + (1 - beta1) * g
                m2[k] = beta2 * m2[k] + (1 - beta2) * g * g
                params[k] = params[k] - lr * (m1[k] / c1) / (np.sqrt(m2[k] / c2) + eps)
    return MLPModel(params, stats)
