"""Training-data selection, attacker modeling, training-set assembly and
score aggregation, glued together by :func:`evaluate_user`."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np

from . import classify
from ._rng import derive_rng, derive_seed
from .classify import HyperParams, Kind, TrainSet
from .errors import (InsufficientNegativePool, InvalidConfig, TooFewSessions,
                     TooFewStrokes, TooFewUsers)
from .features import FeatureStore, UserStrokes, apply_scaler, fit_scaler
from .preprocess import Direction


class SplitStrategy(enum.Enum):
    RANDOM = "RANDOM"
    CONTIGUOUS = "CONTIGUOUS"
    DEDICATED_SESSIONS_CONTIG = "DEDICATED_SESSIONS_CONTIG"
    DEDICATED_SESSIONS_RANDOM = "DEDICATED_SESSIONS_RANDOM"
    INTRA_SESSION = "INTRA_SESSION"


class AttackerMode(enum.Enum):
    EXCLUDE_ATK = "EXCLUDE_ATK"
    INCLUDE_ATK = "INCLUDE_ATK"


@dataclass(frozen=True)
class ProtocolConfig:
    split_strategy: SplitStrategy = SplitStrategy.CONTIGUOUS
    attacker_mode: AttackerMode = AttackerMode.EXCLUDE_ATK
    f_train: float = 0.8
    window: int = 1
    direction_filter: Direction | None = Direction.LEFT
    classifier: Kind = Kind.SVM_RBF
    hp: HyperParams = field(default_factory=HyperParams)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.f_train < 1.0:
            raise InvalidConfig(f"f_train must lie in (0, 1), got {self.f_train}")
        if self.window < 1:
            raise InvalidConfig(f"aggregation window must be >= 1, got {self.window}")

    @property
    def f_test(self) -> float:
        return 1.0 - self.f_train

    def with_seed(self, seed: int) -> "ProtocolConfig":
        return replace(self, seed=seed)


# --- flat key/value form ------------------------------------------------------

CONFIG_KEYS = (
    "split_strategy", "attacker_mode", "f_train", "window", "direction_filter",
    "classifier", "seed",
) + tuple(f"hp.{f.name}" for f in fields(HyperParams))


def config_to_flat(cfg: ProtocolConfig) -> dict:
    out = {
        "split_strategy": cfg.split_strategy.value,
        "attacker_mode": cfg.attacker_mode.value,
        "f_train": repr(cfg.f_train),
        "window": str(cfg.window),
        "direction_filter": cfg.direction_filter.value if cfg.direction_filter else "ALL",
        "classifier": cfg.classifier.value,
        "seed": str(cfg.seed),
    }
    for k, v in asdict(cfg.hp).items():
        if isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        out[f"hp.{k}"] = "auto" if v is None else str(v)
    return out


def _hp_value(name: str, text: str):
    default = getattr(HyperParams(), name)
    if name == "svm_gamma":
        return None if text in ("auto", "scale", "None") else float(text)
    if isinstance(default, tuple):
        return tuple(int(x) for x in text.split(",") if x.strip())
    if isinstance(default, int):
        return int(text)
    return float(text)


def config_from_flat(kv: Mapping[str, str], base: ProtocolConfig | None = None) -> ProtocolConfig:
    cfg = base or ProtocolConfig()
    upd, hp_upd = {}, {}
    try:
        for k, v in kv.items():
            v = str(v).strip()
            if k == "split_strategy":
                upd[k] = SplitStrategy(v.upper())
            elif k == "attacker_mode":
                upd[k] = AttackerMode(v.upper())
            elif k == "f_train":
                upd[k] = float(v)
            elif k == "window":
                upd[k] = int(v)
            elif k == "direction_filter":
                upd[k] = None if v.upper() == "ALL" else Direction(v.upper())
            elif k == "classifier":
                upd[k] = Kind(v.upper())
            elif k == "seed":
                upd[k] = int(v)
            elif k.startswith("hp.") and k[3:] in {f.name for f in fields(HyperParams)}:
                hp_upd[k[3:]] = _hp_value(k[3:], v)
            else:
                raise InvalidConfig(f"unknown config key {k!r}")
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    if hp_upd:
        upd["hp"] = replace(cfg.hp, **hp_upd)
    return replace(cfg, **upd)


# --- splitting ------------------------------------------------------------------

def _count(n: int, f: float) -> int:
    return min(max(int(np.floor(n * f)), 1), n - 1)


def intra_session_choice(sessions: np.ndarray) -> int:
    """Longest session; ties go to the earliest."""
    ids, counts = np.unique(sessions, return_counts=True)
    return int(ids[int(np.argmax(counts))])


def split(sessions: Sequence[int], strategy: SplitStrategy, f_train: float,
          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Train/test indices into a user's chronologically ordered strokes.

    ``sessions`` gives the session ordinal of each stroke. Train and test are
    disjoint and cover every in-scope stroke (for INTRA_SESSION only the
    chosen session is in scope).
    """
    sessions = np.asarray(sessions)
    n = len(sessions)
    idx = np.arange(n)
    if strategy is SplitStrategy.INTRA_SESSION:
        chosen = intra_session_choice(sessions) if n else -1
        scope = idx[sessions == chosen]
        if len(scope) < 2:
            raise TooFewStrokes(f"chosen session has {len(scope)} strokes, need 2")
        h = len(scope) // 2
        return scope[:h], scope[h:]
    if n < 2:
        raise TooFewStrokes(f"user has {n} strokes, need 2")
    if strategy is SplitStrategy.RANDOM:
        k = _count(n, f_train)
        train = np.sort(rng.choice(n, size=k, replace=False))
        return train, np.setdiff1d(idx, train)
    if strategy is SplitStrategy.CONTIGUOUS:
        k = _count(n, f_train)
        return idx[:k], idx[k:]
    ids, counts = np.unique(sessions, return_counts=True)
    if len(ids) < 2:
        raise TooFewSessions(f"user has {len(ids)} session(s); dedicated sessions need 2")
    order = np.arange(len(ids))
    if strategy is SplitStrategy.DEDICATED_SESSIONS_RANDOM:
        order = rng.permutation(len(ids))
    cum = np.cumsum(counts[order])
    # earliest prefix reaching N*f_train; at least one session is left for testing
    n_train = min(int(np.searchsorted(cum, n * f_train, side="left")) + 1, len(ids) - 1)
    train_sessions = ids[order[:n_train]]
    mask = np.isin(sessions, train_sessions)
    return idx[mask], idx[~mask]


# --- attacker plans ---------------------------------------------------------------

@dataclass(frozen=True)
class AttackerPlan:
    """Per target: users supplying training negatives and users scored as attackers."""

    mode: AttackerMode
    negative_pool: Mapping[str, tuple[str, ...]]
    attackers: Mapping[str, tuple[str, ...]]
    halves: tuple[tuple[str, ...], ...] = ()


def plan_attackers(users: Sequence[str], mode: AttackerMode,
                   rng: np.random.Generator) -> AttackerPlan:
    users = list(users)
    if len(users) < 3:
        raise TooFewUsers(f"attacker modeling needs >= 3 users, got {len(users)}")
    if mode is AttackerMode.EXCLUDE_ATK:
        neg, att = {}, {}
        for u in users:
            others = [v for v in users if v != u]
            perm = [others[i] for i in rng.permutation(len(others))]
            h = len(perm) // 2
            neg[u] = tuple(sorted(perm[:h]))
            att[u] = tuple(sorted(perm[h:]))
        return AttackerPlan(mode, neg, att)
    if len(users) < 4:
        raise TooFewUsers(f"attacker inclusion needs >= 4 users, got {len(users)}")
    perm = [users[i] for i in rng.permutation(len(users))]
    h = len(perm) // 2
    halves = (tuple(sorted(perm[:h])), tuple(sorted(perm[h:])))
    pool = {}
    for half in halves:
        for u in half:
            pool[u] = tuple(v for v in half if v != u)
    return AttackerPlan(mode, pool, pool, halves)


# --- training set ------------------------------------------------------------------

def negative_quota(total: int, capacity: Mapping[str, int],
                   rng: np.random.Generator) -> dict[str, int]:
    """Split ``total`` negatives across pool users as evenly as their supply allows.

    Each user gets total // k; the remainder goes to randomly chosen distinct
    users; any user short of its share has the shortfall redistributed to users
    with spare strokes.
    """
    pool = list(capacity)
    k = len(pool)
    if k == 0:
        raise InsufficientNegativePool("empty negative pool")
    if sum(capacity.values()) < total:
        raise InsufficientNegativePool(
            f"pool holds {sum(capacity.values())} strokes, {total} negatives needed")
    base, rem = divmod(total, k)
    quota = {u: base for u in pool}
    for i in rng.choice(k, size=rem, replace=False):
        quota[pool[int(i)]] += 1
    short = 0
    for u in pool:
        if quota[u] > capacity[u]:
            short += quota[u] - capacity[u]
            quota[u] = capacity[u]
    while short:
        spare = [u for u in pool if quota[u] < capacity[u]]
        for i in rng.permutation(len(spare)):
            if not short:
                break
            quota[spare[int(i)]] += 1
            short -= 1
    return quota


@dataclass
class AssembledTrainSet:
    train_set: TrainSet
    negative_sources: dict  # pool user -> row indices into that user's training rows


def assemble_training(target_train: np.ndarray, pool_train: Mapping[str, np.ndarray],
                      rng: np.random.Generator) -> AssembledTrainSet:
    """Positives: every target training row. Negatives: the same count drawn from
    the pool users' training rows (``pool_train`` maps user -> feature matrix),
    rows stacked in pool order."""
    n_pos = len(target_train)
    quota = negative_quota(n_pos, {u: len(X) for u, X in pool_train.items()}, rng)
    rows, sources = [target_train], {}
    for u, X in pool_train.items():
        q = quota[u]
        if q == 0:
            continue
        pick = np.sort(rng.choice(len(X), size=q, replace=False))
        sources[u] = pick
        rows.append(X[pick])
    n_neg = sum(len(v) for v in sources.values())
    y = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
    return AssembledTrainSet(TrainSet(np.vstack(rows), y), sources)


# --- aggregation ------------------------------------------------------------------

def aggregate(scores, w: int) -> np.ndarray:
    """Means of consecutive non-overlapping windows; a trailing partial window is dropped."""
    if w < 1:
        raise InvalidConfig("window must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    m = len(s) // w
    if w == 1:
        return s.copy()
    return s[: m * w].reshape(m, w).mean(axis=1)


# --- evaluation -------------------------------------------------------------------

@dataclass
class UserEval:
    user_id: str
    genuine_scores: np.ndarray
    impostor_scores: dict            # attacker -> scores (aggregated)
    train_genuine_scores: np.ndarray
    train_impostor_scores: dict      # pool user -> training scores
    n_train_pos: int
    n_train_neg: int
    n_test_genuine: int
    raw_genuine: np.ndarray = field(repr=False, default=None)
    raw_impostor: dict = field(repr=False, default=None)

    def impostor_concat(self) -> np.ndarray:
        parts = [self.impostor_scores[a] for a in sorted(self.impostor_scores)]
        return np.concatenate(parts) if parts else np.empty(0)

    def train_impostor_concat(self) -> np.ndarray:
        parts = [self.train_impostor_scores[a] for a in sorted(self.train_impostor_scores)]
        return np.concatenate(parts) if parts else np.empty(0)


class SplitCache:
    """Per-user train/test splits, each drawn from its own (seed, user) stream."""

    def __init__(self, store: FeatureStore, config: ProtocolConfig):
        self.store = store
        self.config = config
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, user: str) -> tuple[np.ndarray, np.ndarray]:
        got = self._cache.get(user)
        if got is None:
            rng = derive_rng(self.config.seed, "split", user)
            got = split(self.store.users[user].session, self.config.split_strategy,
                        self.config.f_train, rng)
            self._cache[user] = got
        return got


def evaluate_user(target: str, store: FeatureStore, config: ProtocolConfig,
                  plan: AttackerPlan, splits: SplitCache | None = None) -> UserEval:
    """split -> assemble -> scale -> train -> score -> aggregate for one target.

    ``store`` must already be restricted to the configured direction.
    """
    splits = splits or SplitCache(store, config)
    us: UserStrokes = store.users[target]
    tr, te = splits(target)
    pool = plan.negative_pool[target]
    attackers = plan.attackers[target]
    if target in pool or target in attackers:
        raise InvalidConfig("a target can never be its own attacker")

    pool_train = {u: store.users[u].features[splits(u)[0]] for u in pool}
    asm = assemble_training(us.features[tr], pool_train,
                            derive_rng(config.seed, "assemble", target))
    scaler = fit_scaler(asm.train_set.X)
    ts = TrainSet(apply_scaler(scaler, asm.train_set.X), asm.train_set.y)
    model = classify.train(config.classifier, ts, config.hp,
                           seed=derive_seed(config.seed, "model", target))

    def sc(X):
        return classify.score(model, apply_scaler(scaler, X))

    w = config.window
    raw_gen = sc(us.features[te])
    raw_imp = {a: sc(store.users[a].features[splits(a)[1]]) for a in attackers}
    train_scores = classify.score(model, ts.X)
    n_pos = asm.train_set.n_pos
    train_imp, off = {}, n_pos
    for u in pool:
        if u in asm.negative_sources:
            k = len(asm.negative_sources[u])
            train_imp[u] = train_scores[off:off + k]
            off += k
    return UserEval(
        user_id=target,
        genuine_scores=aggregate(raw_gen, w),
        impostor_scores={a: aggregate(s, w) for a, s in raw_imp.items()},
        train_genuine_scores=train_scores[:n_pos],
        train_impostor_scores=train_imp,
        n_train_pos=n_pos,
        n_train_neg=asm.train_set.n_neg,
        n_test_genuine=len(te),
        raw_genuine=raw_gen,
        raw_impostor=raw_imp,
    )
