import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from touchpit._rng import derive_rng
from touchpit.errors import (InsufficientNegativePool, InvalidConfig, TooFewSessions,
                             TooFewStrokes, TooFewUsers)
from touchpit.features import Direction
from touchpit.protocol import (AttackerMode, ProtocolConfig, SplitCache, SplitStrategy,
                               aggregate, assemble_training, config_from_flat, config_to_flat,
                               evaluate_user, negative_quota, plan_attackers, split)

S = SplitStrategy


def rng(seed=0):
    return np.random.default_rng(seed)


def test_contiguous_example():
    tr, te = split([0] * 10, S.CONTIGUOUS, 0.5, rng())
    assert tr.tolist() == [0, 1, 2, 3, 4] and te.tolist() == [5, 6, 7, 8, 9]


def test_dedicated_contig_cumulative_rule():
    sessions = [0] * 30 + [1] * 30 + [2] * 40
    tr, te = split(sessions, S.DEDICATED_SESSIONS_CONTIG, 0.5, rng())
    assert set(np.asarray(sessions)[tr]) == {0, 1} and set(np.asarray(sessions)[te]) == {2}


def test_dedicated_keeps_a_test_session():
    sessions = [0] * 5 + [1] * 5
    tr, te = split(sessions, S.DEDICATED_SESSIONS_CONTIG, 0.9, rng())
    assert len(tr) == 5 and len(te) == 5


def test_random_is_seeded():
    a = split(list(range(3)) * 10, S.RANDOM, 0.8, rng(3))
    b = split(list(range(3)) * 10, S.RANDOM, 0.8, rng(3))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert len(a[0]) == 24


def test_intra_uses_longest_session_halves():
    sessions = [0] * 4 + [1] * 7 + [2] * 3
    tr, te = split(sessions, S.INTRA_SESSION, 0.8, rng())
    assert tr.tolist() == [4, 5, 6] and te.tolist() == [7, 8, 9, 10]


def test_split_errors():
    with pytest.raises(TooFewSessions):
        split([0, 0, 0], S.DEDICATED_SESSIONS_RANDOM, 0.8, rng())
    with pytest.raises(TooFewStrokes):
        split([0], S.CONTIGUOUS, 0.8, rng())
    with pytest.raises(TooFewStrokes):
        split([0, 1, 2], S.INTRA_SESSION, 0.8, rng())


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(1, 8), min_size=2, max_size=6), st.sampled_from(list(S)),
       st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_partition_properties(sizes, strategy, f, seed):
    sessions = np.repeat(np.arange(len(sizes)), sizes)
    try:
        tr, te = split(sessions, strategy, f, rng(seed))
    except (TooFewStrokes, TooFewSessions):
        return
    assert len(np.intersect1d(tr, te)) == 0 and len(tr) and len(te)
    scope = np.union1d(tr, te)
    if strategy is S.INTRA_SESSION:
        assert len(np.unique(sessions[scope])) == 1
    else:
        assert np.array_equal(scope, np.arange(len(sessions)))
    if strategy is S.CONTIGUOUS:
        assert tr.max() < te.min()
    if strategy is S.DEDICATED_SESSIONS_CONTIG:
        assert sessions[tr].max() < sessions[te].min()
    if strategy in (S.DEDICATED_SESSIONS_CONTIG, S.DEDICATED_SESSIONS_RANDOM):
        assert set(sessions[tr]).isdisjoint(sessions[te])


def test_plan_exclude_sizes():
    users = [f"u{i}" for i in range(5)]
    p = plan_attackers(users, AttackerMode.EXCLUDE_ATK, rng())
    assert len(p.negative_pool["u0"]) == 2 and len(p.attackers["u0"]) == 2
    p = plan_attackers([f"u{i}" for i in range(11)], AttackerMode.EXCLUDE_ATK, rng())
    assert all(len(p.negative_pool[u]) == 5 and len(p.attackers[u]) == 5 for u in p.attackers)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 30), st.integers(0, 10**6))
def test_plan_exclude_invariants(n, seed):
    users = [f"u{i:02d}" for i in range(n)]
    p = plan_attackers(users, AttackerMode.EXCLUDE_ATK, rng(seed))
    for u in users:
        a, b = set(p.negative_pool[u]), set(p.attackers[u])
        assert a.isdisjoint(b) and u not in a | b
        assert abs(len(a) - len(b)) <= 1 and a | b == set(users) - {u}


def test_plan_include_halves():
    users = [f"u{i}" for i in range(8)]
    p = plan_attackers(users, AttackerMode.INCLUDE_ATK, rng(1))
    assert [len(h) for h in p.halves] == [4, 4]
    for h in p.halves:
        for u in h:
            assert set(p.negative_pool[u]) == set(h) - {u} == set(p.attackers[u])


def test_plan_too_few_users():
    with pytest.raises(TooFewUsers):
        plan_attackers(["a", "b"], AttackerMode.EXCLUDE_ATK, rng())
    with pytest.raises(TooFewUsers):
        plan_attackers(["a", "b", "c"], AttackerMode.INCLUDE_ATK, rng())


def test_quota_examples():
    q = negative_quota(100, {"a": 30, "b": 30, "c": 30, "d": 30}, rng())
    assert list(q.values()) == [25] * 4
    q = negative_quota(100, {"a": 50, "b": 50, "c": 50}, rng())
    assert sorted(q.values()) == [33, 33, 34]
    q = negative_quota(100, {"a": 5, "b": 60, "c": 60}, rng())
    assert q["a"] == 5 and sum(q.values()) == 100
    with pytest.raises(InsufficientNegativePool):
        negative_quota(100, {"a": 5, "b": 6}, rng())


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 200), st.lists(st.integers(0, 80), min_size=1, max_size=8),
       st.integers(0, 1000))
def test_quota_conservation(total, caps, seed):
    cap = {f"p{i}": c for i, c in enumerate(caps)}
    if sum(caps) < total:
        with pytest.raises(InsufficientNegativePool):
            negative_quota(total, cap, rng(seed))
        return
    q = negative_quota(total, cap, rng(seed))
    assert sum(q.values()) == total and all(0 <= q[u] <= cap[u] for u in cap)


def test_assemble_balanced():
    r = rng(4)
    target = r.normal(size=(100, 3))
    pool = {f"p{i}": r.normal(size=(40, 3)) for i in range(3)}
    asm = assemble_training(target, pool, r)
    ts = asm.train_set
    assert ts.n_pos == 100 and ts.n_neg == 100
    assert abs(ts.n_pos - ts.n_neg) <= len(pool)
    for u, idx in asm.negative_sources.items():
        assert len(np.unique(idx)) == len(idx)


def test_aggregate_examples():
    assert aggregate([0.1, 0.5], 1).tolist() == [0.1, 0.5]
    assert aggregate([0.2, 0.4, 0.6], 3) == pytest.approx([0.4])
    assert len(aggregate(np.arange(7), 3)) == 2
    with pytest.raises(InvalidConfig):
        aggregate([1.0], 0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(st.floats(-1, 1), max_size=30), min_size=1, max_size=5),
       st.integers(1, 8))
def test_aggregate_length(seqs, w):
    assert sum(len(aggregate(s, w)) for s in seqs) == sum(len(s) // w for s in seqs)


def test_config_flat_round_trip():
    cfg = ProtocolConfig(split_strategy=S.RANDOM, attacker_mode=AttackerMode.INCLUDE_ATK,
                         window=4, direction_filter=None, seed=9)
    assert config_from_flat(config_to_flat(cfg)) == cfg
    with pytest.raises(InvalidConfig):
        config_from_flat({"bogus": "1"})
    with pytest.raises(InvalidConfig):
        config_from_flat({"window": "x"})


def _evaluate_all(store, cfg):
    users = store.user_ids
    plan = plan_attackers(users, cfg.attacker_mode, derive_rng(cfg.seed, "plan"))
    cache = SplitCache(store, cfg)
    return plan, [evaluate_user(u, store, cfg, plan, cache) for u in users]


@pytest.mark.parametrize("mode", list(AttackerMode))
def test_evaluate_user_invariants(small_store, mode):
    store = small_store.view(direction=Direction.LEFT)
    cfg = ProtocolConfig(attacker_mode=mode, seed=3)
    plan, evals = _evaluate_all(store, cfg)
    for ev in evals:
        assert ev.user_id not in ev.impostor_scores
        assert set(ev.impostor_scores) == set(plan.attackers[ev.user_id])
        assert set(ev.train_impostor_scores) <= set(plan.negative_pool[ev.user_id])
        if mode is AttackerMode.EXCLUDE_ATK:
            assert set(ev.train_impostor_scores).isdisjoint(ev.impostor_scores)
        assert ev.n_train_pos == ev.n_train_neg
        assert len(ev.genuine_scores) == ev.n_test_genuine
    _, again = _evaluate_all(store, cfg)
    for a, b in zip(evals, again):
        assert np.array_equal(a.genuine_scores, b.genuine_scores)
        assert all(np.array_equal(a.impostor_scores[k], b.impostor_scores[k]) for k in a.impostor_scores)


def test_evaluate_separable_users_have_zero_eer():
    from touchpit.features import FeatureStore, UserStrokes
    from touchpit.metrics import eer

    r = rng(7)
    users = {}
    for i in range(3):
        n = 40
        users[f"u{i}"] = UserStrokes(r.normal(10 * i, 0.1, (n, 4)), np.repeat([0, 1], n // 2),
                                     np.full(n, 2, dtype=np.int8), np.zeros(n, dtype=np.int16),
                                     np.arange(n, dtype=np.int64))
    store = FeatureStore(users, ("iPhone 7",))
    _, evals = _evaluate_all(store, ProtocolConfig())
    for ev in evals:
        assert eer(ev.genuine_scores, ev.impostor_concat())[0] == 0.0


def test_windowed_evaluation_matches_aggregated_raw(small_store):
    store = small_store.view(direction=Direction.LEFT)
    _, evals = _evaluate_all(store, ProtocolConfig(window=3, seed=1))
    for ev in evals:
        assert np.allclose(ev.genuine_scores, aggregate(ev.raw_genuine, 3))
