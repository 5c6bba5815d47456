"""Named, seeded experiment variants.

Every variant draws its randomness from ``(spec.seed, labels...)`` streams,
so records do not depend on the worker count. Repetition ``r`` always runs
its protocol with seed ``derive_seed(spec.seed, "rep", r)``; that is what
makes e.g. the w=1 aggregation record identical to the baseline record.
"""
from __future__ import annotations

import enum
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import classify
from ._rng import derive_rng, derive_seed
from .classify import Kind
from .dataset import Dataset
from .errors import InvalidConfig, PreconditionError, VariantPreconditionFailed
from .features import FeatureStore, apply_scaler, build_store, fit_scaler
from .metrics import (default_fpr_grid, eer, extrapolate_std, far_frr_at, mean_roc, roc,
                      summarize, welch_test, Z95)
from .protocol import (AttackerMode, ProtocolConfig, SplitCache, SplitStrategy, UserEval,
                       aggregate, evaluate_user, plan_attackers)

SCHEMA_VERSION = 1


class Variant(enum.Enum):
    BASELINE = "BASELINE"
    P1_SAMPLE_SIZE = "P1_SAMPLE_SIZE"
    P1_SESSIONS = "P1_SESSIONS"
    P2_DEVICE_MIXING = "P2_DEVICE_MIXING"
    P2_DEVICE_IDENTIFY = "P2_DEVICE_IDENTIFY"
    P3_SPLITS = "P3_SPLITS"
    P4_ATTACKER = "P4_ATTACKER"
    P5_AGGREGATION = "P5_AGGREGATION"
    CUMULATIVE = "CUMULATIVE"
    THRESHOLD_TRANSFER = "THRESHOLD_TRANSFER"
    PARTIAL_WINDOW = "PARTIAL_WINDOW"
    CLASSIFIERS = "CLASSIFIERS"


DEFAULT_N_GRID = {
    Variant.P1_SAMPLE_SIZE: (10, 20, 40),
    Variant.P4_ATTACKER: (11, 21, 41),
}
DEFAULT_REPS = {Variant.P1_SAMPLE_SIZE: 50, Variant.P4_ATTACKER: 10,
                Variant.P5_AGGREGATION: 10, Variant.CUMULATIVE: 10,
                Variant.PARTIAL_WINDOW: 10}


@dataclass(frozen=True)
class ExperimentSpec:
    variant: Variant
    config: ProtocolConfig = field(default_factory=ProtocolConfig)
    reps: int | None = None
    n_grid: tuple = ()
    w_grid: tuple = ()
    s_grid: tuple = ()
    seed: int = 0
    ref_n: int = 40
    n_users: int | None = None       # subsample size (BASELINE, CUMULATIVE, ...)
    full_sessions: int | None = None  # P1_SESSIONS: required completed sessions
    device: str | None = None         # CUMULATIVE realistic arm
    devices: tuple = ()               # P2_DEVICE_IDENTIFY subset
    max_per_class: int = 150          # P2_DEVICE_IDENTIFY, rows per phone model
    test_fraction: float = 0.2
    kinds: tuple = ()                 # CLASSIFIERS

    @property
    def n_reps(self) -> int:
        return self.reps if self.reps is not None else DEFAULT_REPS.get(self.variant, 1)


@dataclass
class ResultRecord:
    variant: str
    params: dict
    payload: dict
    seed: int
    wall_time: float = 0.0

    def to_json(self) -> str:
        """One JSON-lines row. Wall time is left out so reruns are byte-identical."""
        return json.dumps({"schema": SCHEMA_VERSION, "variant": self.variant,
                           "params": self.params, "payload": self.payload, "seed": self.seed},
                          sort_keys=True, default=_jsonable)

    @classmethod
    def from_json(cls, line: str) -> "ResultRecord":
        d = json.loads(line)
        return cls(d["variant"], d["params"], d["payload"], d["seed"])


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, enum.Enum):
        return o.value
    raise TypeError(f"not serializable: {type(o)}")


# --- evaluation workers -----------------------------------------------------

_STORE: FeatureStore | None = None


def _install(store):
    global _STORE
    _STORE = store


def _pick_sessions(pick):
    lo, hi = pick
    return lambda ids: ids[lo:hi]


def evaluate_population(store: FeatureStore, users: Sequence[str], config: ProtocolConfig,
                        device: str | None = None, pick=None) -> list[UserEval]:
    """Evaluate every listed user against the others under one attacker plan."""
    view = store.view(device=device, users=users)
    if pick is not None:
        view = view.sessions_subset(_pick_sessions(pick))
    ids = [u for u in users if u in view.users]
    plan = plan_attackers(ids, config.attacker_mode, derive_rng(config.seed, "plan"))
    splits = SplitCache(view, config)
    return [evaluate_user(u, view, config, plan, splits) for u in ids]


def _task(args):
    users, config, device, pick = args
    return evaluate_population(_STORE, users, config, device, pick)


class _Runner:
    def __init__(self, store: FeatureStore, jobs: int = 1):
        self.store = store
        self.jobs = max(1, int(jobs))
        self._pool = None

    def __enter__(self):
        if self.jobs > 1:
            self._pool = ProcessPoolExecutor(self.jobs, initializer=_install,
                                             initargs=(self.store,))
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()

    def map(self, tasks: list) -> list:
        if self._pool is None:
            _install(self.store)
            return [_task(t) for t in tasks]
        return list(self._pool.map(_task, tasks))


# --- summaries -------------------------------------------------------------------

def user_eers(evals: Sequence[UserEval], w: int = 1) -> dict[str, float]:
    """Per-user EER after aggregating raw score sequences with window ``w``.
    Users left without a genuine or impostor window are skipped."""
    out = {}
    for ev in evals:
        g = aggregate(ev.raw_genuine, w)
        imp = [aggregate(ev.raw_impostor[a], w) for a in sorted(ev.raw_impostor)]
        imp = np.concatenate(imp) if imp else np.empty(0)
        if len(g) and len(imp):
            out[ev.user_id] = eer(g, imp)[0]
    return out


def user_rocs(evals: Sequence[UserEval], w: int = 1, grid=None) -> list[np.ndarray]:
    curves = []
    for ev in evals:
        g = aggregate(ev.raw_genuine, w)
        imp = [aggregate(ev.raw_impostor[a], w) for a in sorted(ev.raw_impostor)]
        imp = np.concatenate(imp) if imp else np.empty(0)
        if len(g) and len(imp):
            curves.append(roc(g, imp, grid))
    return curves


def reps_payload(rep_evals: Sequence[Sequence[UserEval]], w: int = 1,
                 with_roc: bool = False) -> dict:
    """Aggregate over repetitions: mean of per-rep mean EER and per-rep spread."""
    sums = [summarize(list(user_eers(evs, w).values())) for evs in rep_evals]
    means = [s.mean for s in sums]
    stds = [s.std for s in sums]
    n = len(sums)
    out = {
        "mean_eer": float(np.mean(means)),
        "std": float(np.mean(stds)),
        "ci95_users": float(np.mean([s.ci95 for s in sums])),
        "ci95_reps": float(Z95 * np.std(means, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "rep_mean_eer": means,
        "rep_std": stds,
        "n_users": sums[0].n_users if sums else 0,
        "reps": n,
        "per_user_eer": dict(sorted(user_eers(rep_evals[0], w).items())),
    }
    if with_roc:
        grid = default_fpr_grid()
        curves = [c for evs in rep_evals for c in user_rocs(evs, w, grid)]
        if curves:
            mr = mean_roc(curves, grid)
            out["roc"] = {"fpr": mr.fpr.tolist(), "tpr_mean": mr.tpr_mean.tolist(),
                          "tpr_ci_low": mr.ci_low.tolist(), "tpr_ci_high": mr.ci_high.tolist()}
    return out


def _pooled_user_eers(rep_evals, w=1) -> list[float]:
    return [e for evs in rep_evals for e in user_eers(evs, w).values()]


def _welch_p(a, b) -> float | None:
    try:
        return welch_test(a, b).p_value
    except PreconditionError:
        return None
    except Exception:
        return None


# --- helpers -------------------------------------------------------------------

def _rep_config(spec: ExperimentSpec, r: int, **changes) -> ProtocolConfig:
    return replace(spec.config, seed=derive_seed(spec.seed, "rep", r), **changes)


def _subsample(users: Sequence[str], n: int | None, rng) -> list[str]:
    users = list(users)
    if n is None or n >= len(users):
        if n is not None and n > len(users):
            raise VariantPreconditionFailed(
                f"need {n} users but only {len(users)} are available")
        return users
    pick = set(rng.choice(len(users), size=n, replace=False).tolist())
    return [u for i, u in enumerate(users) if i in pick]


def _min_users(config: ProtocolConfig) -> int:
    return 4 if config.attacker_mode is AttackerMode.INCLUDE_ATK else 3


def _require(cond: bool, msg: str):
    if not cond:
        raise VariantPreconditionFailed(msg)


def _multi_session_users(store: FeatureStore, k: int = 2) -> list[str]:
    return [u for u, us in store.users.items() if len(us.session_ids()) >= k]


# --- variants ----------------------------------------------------------------------

def _baseline(spec, store, runner):
    users = store.user_ids
    _require(len(users) >= _min_users(spec.config),
             f"baseline needs >= {_min_users(spec.config)} users, found {len(users)}")
    tasks = []
    for r in range(spec.n_reps):
        sub = _subsample(users, spec.n_users, derive_rng(spec.seed, "subsample", r))
        tasks.append((sub, _rep_config(spec, r), None, None))
    evals = runner.map(tasks)
    payload = reps_payload(evals, spec.config.window, with_roc=True)
    return [({"window": spec.config.window, "n_users": spec.n_users}, payload)]


def _p5(spec, store, runner):
    users = store.user_ids
    _require(len(users) >= _min_users(spec.config), "aggregation needs at least 3 users")
    grid = spec.w_grid or tuple(range(1, 21))
    tasks = []
    for r in range(spec.n_reps):
        sub = _subsample(users, spec.n_users, derive_rng(spec.seed, "subsample", r))
        tasks.append((sub, _rep_config(spec, r, window=1), None, None))
    evals = runner.map(tasks)
    return [({"window": w, "n_users": spec.n_users}, reps_payload(evals, w, with_roc=True))
            for w in grid]


def _p1_sample_size(spec, store, runner):
    grid = spec.n_grid or DEFAULT_N_GRID[Variant.P1_SAMPLE_SIZE]
    users = store.user_ids
    _require(max(grid) <= len(users),
             f"n-grid reaches {max(grid)} users but only {len(users)} are available")
    _require(min(grid) >= _min_users(spec.config), "every n must be >= 3")
    out = {}
    for n in grid:
        tasks = [(_subsample(users, n, derive_rng(spec.seed, "P1", n, r)),
                  _rep_config(spec, r), None, None) for r in range(spec.n_reps)]
        p = reps_payload(runner.map(tasks))
        p.pop("per_user_eer")
        out[n] = p
    ref = out.get(spec.ref_n)
    records = []
    for n in grid:
        p = out[n]
        if ref is not None and ref["mean_eer"] > 0:
            p["extrapolated_mean_eer"] = ref["mean_eer"]
            p["extrapolated_std"] = extrapolate_std(p["mean_eer"], ref["mean_eer"], ref["std"])
            p["std_minus_extrapolated"] = p["std"] - p["extrapolated_std"]
        records.append(({"n": n, "ref_n": spec.ref_n}, p))
    return records


def _p1_sessions(spec, store, runner):
    counts = {u: len(us.session_ids()) for u, us in store.users.items()}
    S = spec.full_sessions or max(counts.values())
    eligible = [u for u, c in counts.items() if c >= S]
    _require(len(eligible) >= _min_users(spec.config),
             f"only {len(eligible)} users completed {S} sessions; need >= 3")
    grid = spec.s_grid or tuple(range(1, S + 1))
    _require(max(grid) <= S, f"s-grid reaches {max(grid)} but users have {S} sessions")
    records = []
    tasks, keys = [], []
    for s in grid:
        picks = [("session_count", (0, s))]
        if 2 * s <= S:
            picks += [("early", (0, s)), ("late", (S - s, S))]
        for tag, pick in picks:
            for r in range(spec.n_reps):
                tasks.append((eligible, _rep_config(spec, r), None, pick))
                keys.append((s, tag))
    results = runner.map(tasks)
    by = {}
    for k, ev in zip(keys, results):
        by.setdefault(k, []).append(ev)

    for s in grid:
        p = reps_payload(by[(s, "session_count")])
        records.append(({"analysis": "session_count", "s": s, "full_sessions": S}, p))
        if (s, "early") in by:
            pe, pl = reps_payload(by[(s, "early")]), reps_payload(by[(s, "late")])
            records.append(({"analysis": "early_late", "s": s, "full_sessions": S}, {
                "early": pe, "late": pl,
                "p_value": _welch_p(_pooled_user_eers(by[(s, "early")]),
                                    _pooled_user_eers(by[(s, "late")])),
            }))
    scatter_tasks = [(store.user_ids, _rep_config(spec, r), None, None)
                     for r in range(spec.n_reps)]
    _require(len(store.user_ids) >= _min_users(spec.config), "too few users")
    scatter = runner.map(scatter_tasks)
    per_user = {}
    for evs in scatter:
        for u, e in user_eers(evs).items():
            per_user.setdefault(u, []).append(e)
    points = [{"user_id": u, "n_strokes": len(store.users[u]),
               "n_sessions": counts[u], "eer": float(np.mean(v))}
              for u, v in sorted(per_user.items())]
    records.append(({"analysis": "swipe_scatter"}, {"points": points}))
    return records


def _p2_mixing(spec, store, runner):
    per_dev = {}
    for u, us in store.users.items():
        for code in np.unique(us.device):
            per_dev.setdefault(store.devices[int(code)], []).append(u)
    need = _min_users(spec.config)
    usable = {d: sorted(us) for d, us in per_dev.items() if len(us) >= need}
    _require(len(per_dev) >= 2, "device mixing needs data from at least two phone models")
    _require(bool(usable), f"no phone model has >= {need} users")
    all_users = store.user_ids
    records = []
    for dev, users in sorted(usable.items()):
        n = len(users)
        dev_tasks = [(users, _rep_config(spec, r), dev, None) for r in range(spec.n_reps)]
        comb_tasks = [(_subsample(all_users, n, derive_rng(spec.seed, "P2", dev, r)),
                       _rep_config(spec, r), None, None) for r in range(spec.n_reps)]
        dev_ev = runner.map(dev_tasks)
        comb_ev = runner.map(comb_tasks)
        pd_, pc = reps_payload(dev_ev), reps_payload(comb_ev)
        diffs = [a - b for a, b in zip(pd_["rep_mean_eer"], pc["rep_mean_eer"])]
        records.append(({"device": dev, "n_users": n}, {
            "device": pd_, "combined": pc,
            "rep_device_minus_combined": diffs,
            "mean_difference": float(np.mean(diffs)),
            "p_value": _welch_p(_pooled_user_eers(dev_ev), _pooled_user_eers(comb_ev)),
        }))
    return records


def _device_split(store, devices, test_fraction, rng):
    perm = [store.user_ids[i] for i in rng.permutation(len(store))]
    users_by_dev = {d: [] for d in devices}
    for u in perm:
        for code in np.unique(store.users[u].device):
            name = store.devices[int(code)]
            if name in users_by_dev:
                users_by_dev[name].append(u)
    train, test = set(), set()
    for d in devices:
        us = users_by_dev[d]
        quota = max(1, int(round(test_fraction * len(us))))
        picked = 0
        for u in us:
            if picked < quota and u not in train:
                test.add(u)
                picked += 1
        train.update(u for u in us if u not in test)
    return train, test


def _rows_by_device(store, users, devices):
    """Per device: (feature rows, owning user id per row)."""
    out = {d: ([], []) for d in devices}
    for u in sorted(users):
        us = store.users[u]
        for d in devices:
            m = us.device == store.devices.index(d)
            if m.any():
                out[d][0].append(us.features[m])
                out[d][1].extend([u] * int(m.sum()))
    return {d: (np.vstack(X) if X else np.empty((0, 0)), np.array(g, dtype=object))
            for d, (X, g) in out.items()}


def _balanced(rows, cap, rng):
    k = min(min(len(v[0]) for v in rows.values()), cap)
    X, y, g = [], [], []
    for d in sorted(rows):
        v, owners = rows[d]
        pick = np.sort(rng.choice(len(v), size=k, replace=False))
        X.append(v[pick])
        g.append(owners[pick])
        y += [d] * k
    return np.vstack(X), np.array(y), np.concatenate(g)


def cluster_sigma(correct: np.ndarray, groups, p0: float) -> float:
    """Standard error of accuracy around p0 treating each group as one sampling unit.

    Strokes of one user share that user's behaviour, so their outcomes are not
    independent trials; this is the usual cluster-robust (sandwich) estimate.
    """
    correct = np.asarray(correct, dtype=np.float64)
    n = len(correct)
    resid = {}
    for c, g in zip(correct, groups):
        resid[g] = resid.get(g, 0.0) + (c - p0)
    return math.sqrt(sum(r * r for r in resid.values())) / n


def _p2_identify(spec, store, runner):
    counts = {}
    for u, us in store.users.items():
        for code in np.unique(us.device):
            counts.setdefault(store.devices[int(code)], set()).add(u)
    devices = sorted(spec.devices or counts)
    for d in devices:
        _require(len(counts.get(d, ())) >= 2,
                 f"phone model {d!r} needs >= 2 users to keep train and test users disjoint")
    _require(len(devices) >= 2, "device identification needs >= 2 phone models")
    K = len(devices)
    accs, n_tests, hits, owners = [], [], [], []
    cm_total = np.zeros((K, K), dtype=np.int64)
    for r in range(spec.n_reps):
        rng = derive_rng(spec.seed, "identify", r)
        train_u, test_u = _device_split(store, devices, spec.test_fraction, rng)
        tr = _rows_by_device(store, train_u, devices)
        te = _rows_by_device(store, test_u, devices)
        _require(all(len(v[0]) for v in tr.values()) and all(len(v[0]) for v in te.values()),
                 "every phone model needs strokes in both train and test users")
        Xtr, ytr, _ = _balanced(tr, spec.max_per_class, rng)
        Xte, yte, gte = _balanced(te, spec.max_per_class, rng)
        sc = fit_scaler(Xtr)
        model = classify.train_multiclass(apply_scaler(sc, Xtr), ytr, spec.config.hp)
        pred = classify.predict_class(model, apply_scaler(sc, Xte))
        accs.append(float(np.mean(pred == yte)))
        n_tests.append(len(yte))
        hits.append(pred == yte)
        owners.append(gte)
        cm_total += classify.confusion_matrix(yte, pred, devices)
    chance = 1.0 / K
    n_total = int(sum(n_tests))
    acc = float(np.sum(np.array(accs) * np.array(n_tests)) / n_total)
    sigma = math.sqrt(chance * (1 - chance) / n_total)
    groups = np.concatenate(owners)
    csig = cluster_sigma(np.concatenate(hits), groups, chance)
    return [({"devices": devices}, {
        "accuracy": acc, "rep_accuracy": accs, "n_test": n_total, "chance": chance,
        "binomial_sigma": sigma, "z_vs_chance": (acc - chance) / sigma,
        "cluster_sigma": csig, "n_test_users": int(len(set(groups))),
        "cluster_z_vs_chance": (acc - chance) / csig if csig > 0 else 0.0,
        "confusion_matrix": cm_total.tolist(), "classes": devices,
    })]


def _p3(spec, store, runner):
    users = _multi_session_users(store)
    _require(len(users) >= _min_users(spec.config),
             f"TooFewSessions: only {len(users)} users have >= 2 sessions; "
             f"dedicated-session splits need >= {_min_users(spec.config)} such users")
    records = []
    for strat in SplitStrategy:
        tasks = [(users, _rep_config(spec, r, split_strategy=strat), None, None)
                 for r in range(spec.n_reps)]
        records.append(({"split_strategy": strat.value, "n_users": len(users)},
                         reps_payload(runner.map(tasks), with_roc=True)))
    return records


def _p4(spec, store, runner):
    grid = spec.n_grid or DEFAULT_N_GRID[Variant.P4_ATTACKER]
    users = store.user_ids
    _require(max(grid) <= len(users),
             f"n-grid reaches {max(grid)} users but only {len(users)} are available")
    _require(min(grid) >= 4, "attacker inclusion needs n >= 4")
    records = []
    for n in grid:
        subs = [_subsample(users, n, derive_rng(spec.seed, "P4", n, r))
                for r in range(spec.n_reps)]
        ex = runner.map([(s, _rep_config(spec, r, attacker_mode=AttackerMode.EXCLUDE_ATK),
                          None, None) for r, s in enumerate(subs)])
        inc = runner.map([(s, _rep_config(spec, r, attacker_mode=AttackerMode.INCLUDE_ATK),
                           None, None) for r, s in enumerate(subs)])
        pe, pi = reps_payload(ex), reps_payload(inc)
        pe.pop("per_user_eer")
        pi.pop("per_user_eer")
        diffs = [i - e for i, e in zip(pi["rep_mean_eer"], pe["rep_mean_eer"])]
        records.append(({"n": n}, {
            "exclude": pe, "include": pi, "rep_include_minus_exclude": diffs,
            "mean_difference": float(np.mean(diffs)),
            "ci95_difference": float(Z95 * np.std(diffs, ddof=1) / math.sqrt(len(diffs)))
            if len(diffs) > 1 else 0.0,
        }))
    return records


def _most_populous_device(store):
    counts = {}
    for u, us in store.users.items():
        for code in np.unique(us.device):
            counts[store.devices[int(code)]] = counts.get(store.devices[int(code)], 0) + 1
    return max(sorted(counts), key=lambda d: counts[d])


def _cumulative(spec, store, runner):
    n = spec.n_users or 40
    dev = spec.device or _most_populous_device(store)
    _require(dev in store.devices, f"unknown phone model {dev!r}")
    dev_users = [u for u in _multi_session_users(store.view(device=dev))]
    _require(len(dev_users) >= n,
             f"realistic arm needs {n} users with >= 2 sessions on {dev}, found {len(dev_users)}")
    _require(len(store) >= n, f"unrealistic arm needs {n} users, found {len(store)}")
    un_tasks, re_tasks = [], []
    for r in range(spec.n_reps):
        un_tasks.append((_subsample(store.user_ids, n, derive_rng(spec.seed, "cum-u", r)),
                         _rep_config(spec, r, attacker_mode=AttackerMode.INCLUDE_ATK,
                                     split_strategy=SplitStrategy.RANDOM), None, None))
        re_tasks.append((_subsample(dev_users, n, derive_rng(spec.seed, "cum-r", r)),
                         _rep_config(spec, r, attacker_mode=AttackerMode.EXCLUDE_ATK,
                                     split_strategy=SplitStrategy.DEDICATED_SESSIONS_CONTIG),
                         dev, None))
    pu = reps_payload(runner.map(un_tasks), with_roc=True)
    pr = reps_payload(runner.map(re_tasks), with_roc=True)
    diffs = [a - b for a, b in zip(pr["rep_mean_eer"], pu["rep_mean_eer"])]
    return [({"n_users": n, "device": dev}, {
        "unrealistic": pu, "realistic": pr, "rep_realistic_minus_unrealistic": diffs,
        "mean_difference": float(np.mean(diffs)),
    })]


def transfer_threshold(ev: UserEval, w: int = 1) -> float | None:
    """EER threshold chosen on the user's own training scores.

    Balanced negatives leave each pool user only a few training strokes, often
    fewer than ``w``, so impostor windows run over the pool's scores
    concatenated in user order and may span two pool users.
    """
    g = aggregate(ev.train_genuine_scores, w)
    imp = aggregate(ev.train_impostor_concat(), w)
    if not len(g) or not len(imp):
        return None
    return eer(g, imp)[1]


def _threshold_transfer(spec, store, runner):
    users = store.user_ids
    _require(len(users) >= _min_users(spec.config), "too few users")
    w = spec.config.window
    tasks = [(_subsample(users, spec.n_users, derive_rng(spec.seed, "subsample", r)),
              _rep_config(spec, r), None, None) for r in range(spec.n_reps)]
    rows = []
    for evs in runner.map(tasks):
        for ev in evs:
            g, imp = ev.genuine_scores, ev.impostor_concat()
            thr = transfer_threshold(ev, w)
            if thr is None or not len(g) or not len(imp):
                continue
            far, frr = far_frr_at(g, imp, thr)
            test_eer = eer(g, imp)[0]
            rows.append((test_eer, far, frr))
    arr = np.array(rows)
    op = 0.5 * (arr[:, 1] + arr[:, 2])
    return [({"window": w}, {
        "test_selected_eer": float(arr[:, 0].mean()),
        "test_selected_std": float(arr[:, 0].std(ddof=1)) if len(arr) > 1 else 0.0,
        "transferred_error": float(op.mean()),
        "transferred_std": float(op.std(ddof=1)) if len(arr) > 1 else 0.0,
        "transferred_far": float(arr[:, 1].mean()),
        "transferred_frr": float(arr[:, 2].mean()),
        "users_max_rate_at_least_eer": int(np.sum(np.maximum(arr[:, 1], arr[:, 2])
                                                  >= arr[:, 0] - 1e-12)),
        "n_user_evaluations": len(arr),
    })]


def mixed_window_scores(ev: UserEval, w: int, n_malicious: int) -> np.ndarray:
    """Window scores of (w - n) genuine test scores followed by n attacker scores.

    Window j takes genuine scores [j*w, j*w + w - n) and n consecutive scores of
    attacker j mod A starting at (j // A) * w (wrapping)."""
    g = ev.raw_genuine
    attackers = [a for a in sorted(ev.raw_impostor) if len(ev.raw_impostor[a])]
    m = len(g) // w
    if m == 0 or (n_malicious and not attackers):
        return np.empty(0)
    out = np.empty(m)
    for j in range(m):
        parts = [g[j * w: j * w + w - n_malicious]]
        if n_malicious:
            a = ev.raw_impostor[attackers[j % len(attackers)]]
            start = (j // len(attackers)) * w
            parts.append(np.take(a, np.arange(start, start + n_malicious), mode="wrap"))
        out[j] = np.concatenate(parts).mean()
    return out


def _partial_window(spec, store, runner):
    w = spec.w_grid[0] if spec.w_grid else 10
    users = store.user_ids
    _require(len(users) >= _min_users(spec.config), "too few users")
    tasks = [(_subsample(users, spec.n_users, derive_rng(spec.seed, "subsample", r)),
              _rep_config(spec, r, window=1), None, None) for r in range(spec.n_reps)]
    rep_far = {n: [] for n in range(w + 1)}
    for evs in runner.map(tasks):
        acc = {n: [0, 0] for n in range(w + 1)}
        for ev in evs:
            thr = transfer_threshold(ev, w)
            if thr is None:
                continue
            for n in range(w + 1):
                s = mixed_window_scores(ev, w, n)
                acc[n][0] += int(np.sum(s >= thr))
                acc[n][1] += len(s)
        for n in range(w + 1):
            if acc[n][1]:
                rep_far[n].append(acc[n][0] / acc[n][1])
    records = []
    for n in range(w + 1):
        v = rep_far[n]
        records.append(({"window": w, "n_malicious": n}, {
            "acceptance_rate": float(np.mean(v)) if v else math.nan,
            "ci95": float(Z95 * np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0,
            "rep_acceptance_rate": v,
        }))
    return records


def _classifiers(spec, store, runner):
    """Realistic-minus-unrealistic EER gap for each pitfall and classifier."""
    kinds = spec.kinds or tuple(Kind)
    n_small = spec.n_users or 40
    n_large = max(spec.n_grid) if spec.n_grid else min(400, len(store))
    records = []
    for kind in kinds:
        kind = Kind(kind)
        base = replace(spec, config=replace(spec.config, classifier=kind))
        row = {}
        p1 = _p1_sample_size(replace(base, n_grid=(n_small, n_large), ref_n=n_small),
                             store, runner)
        row["P1"] = p1[0][1]["mean_eer"] - p1[1][1]["mean_eer"]
        dev = spec.device or _most_populous_device(store)
        mix = [p for params, p in _p2_mixing(base, store, runner) if params["device"] == dev]
        row["P2"] = mix[0]["mean_difference"] if mix else None
        p3 = {params["split_strategy"]: p["mean_eer"] for params, p in _p3(base, store, runner)}
        row["P3"] = p3["CONTIGUOUS"] - p3["RANDOM"]
        p4 = _p4(replace(base, n_grid=(n_small,)), store, runner)
        row["P4"] = -p4[0][1]["mean_difference"]
        cum = _cumulative(replace(base, n_users=n_small), store, runner)
        row["cumulative"] = cum[0][1]["mean_difference"]
        records.append(({"classifier": kind.value, "n_small": n_small, "n_large": n_large},
                        {"realistic_minus_unrealistic": row}))
    return records


_DISPATCH = {
    Variant.BASELINE: _baseline,
    Variant.P1_SAMPLE_SIZE: _p1_sample_size,
    Variant.P1_SESSIONS: _p1_sessions,
    Variant.P2_DEVICE_MIXING: _p2_mixing,
    Variant.P2_DEVICE_IDENTIFY: _p2_identify,
    Variant.P3_SPLITS: _p3,
    Variant.P4_ATTACKER: _p4,
    Variant.P5_AGGREGATION: _p5,
    Variant.CUMULATIVE: _cumulative,
    Variant.THRESHOLD_TRANSFER: _threshold_transfer,
    Variant.PARTIAL_WINDOW: _partial_window,
    Variant.CLASSIFIERS: _classifiers,
}


def prepare(data: Dataset | FeatureStore, config: ProtocolConfig) -> FeatureStore:
    store = data if isinstance(data, FeatureStore) else build_store(data)
    return store.view(direction=config.direction_filter, min_strokes=2)


def run(spec: ExperimentSpec, data: Dataset | FeatureStore, jobs: int = 1) -> list[ResultRecord]:
    """Run one experiment variant; records come back in a fixed order."""
    validate_spec(spec)
    store = prepare(data, spec.config)
    t0 = time.perf_counter()
    try:
        with _Runner(store, jobs) as runner:
            out = _DISPATCH[spec.variant](spec, store, runner)
    except VariantPreconditionFailed:
        raise
    except PreconditionError as exc:
        raise VariantPreconditionFailed(f"{type(exc).__name__}: {exc}") from exc
    elapsed = time.perf_counter() - t0
    return [ResultRecord(spec.variant.value, params, payload, spec.seed, elapsed)
            for params, payload in out]


def compare_datasets(spec: ExperimentSpec, a: Dataset | FeatureStore,
                     b: Dataset | FeatureStore, jobs: int = 1) -> list[ResultRecord]:
    """Baseline on two datasets (e.g. remote vs lab) plus a Welch test on per-user EERs."""
    spec = replace(spec, variant=Variant.BASELINE)
    ra = run(spec, a, jobs)[0]
    rb = run(spec, b, jobs)[0]
    ea = list(ra.payload["per_user_eer"].values())
    eb = list(rb.payload["per_user_eer"].values())
    p = {"a": ra.payload, "b": rb.payload,
         "difference": ra.payload["mean_eer"] - rb.payload["mean_eer"],
         "p_value": _welch_p(ea, eb)}
    return [ResultRecord("COMPARE", {"window": spec.config.window}, p, spec.seed,
                         ra.wall_time + rb.wall_time)]


# --- flat key/value form ------------------------------------------------------

SPEC_KEYS = ("reps", "n_grid", "w_grid", "s_grid", "ref_n", "n_users", "full_sessions",
             "device", "devices", "max_per_class", "test_fraction", "kinds")
_INT_GRIDS = ("n_grid", "w_grid", "s_grid")
_OPT_INTS = ("reps", "n_users", "full_sessions")


def spec_to_flat(spec: ExperimentSpec) -> dict:
    out = {}
    for k in SPEC_KEYS:
        v = getattr(spec, k)
        if isinstance(v, tuple):
            v = ";".join(str(getattr(x, "value", x)) for x in v)
        out[k] = "auto" if v is None else str(v)
    return out


def spec_from_flat(kv, variant: Variant, config: ProtocolConfig) -> ExperimentSpec:
    """Build a spec from flat keys; unknown keys raise InvalidConfig."""
    upd = {}
    try:
        for k, v in kv.items():
            v = str(v).strip()
            if k in _INT_GRIDS:
                upd[k] = tuple(int(x) for x in v.replace(";", ",").split(",") if x.strip())
            elif k in _OPT_INTS:
                upd[k] = None if v in ("auto", "") else int(v)
            elif k in ("ref_n", "max_per_class"):
                upd[k] = int(v)
            elif k == "test_fraction":
                upd[k] = float(v)
            elif k == "device":
                upd[k] = None if v in ("auto", "") else v
            elif k == "devices":
                upd[k] = tuple(x.strip() for x in v.split(";") if x.strip())
            elif k == "kinds":
                upd[k] = tuple(Kind(x.strip().upper()) for x in v.split(";") if x.strip())
            else:
                raise InvalidConfig(f"unknown experiment key {k!r}")
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    spec = ExperimentSpec(variant, config, seed=config.seed, **upd)
    validate_spec(spec)
    return spec


def validate_spec(spec: ExperimentSpec) -> None:
    if spec.reps is not None and spec.reps < 1:
        raise InvalidConfig("reps must be >= 1")
    for g in _INT_GRIDS:
        if any(x < 1 for x in getattr(spec, g)):
            raise InvalidConfig(f"{g} entries must be >= 1")
    if not 0 < spec.test_fraction < 1:
        raise InvalidConfig("test_fraction must be in (0, 1)")
    if spec.config.window < 1:
        raise InvalidConfig("window must be >= 1")
    if not 0 < spec.config.f_train < 1:
        raise InvalidConfig("f_train must be in (0, 1)")
