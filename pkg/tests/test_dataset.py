import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from touchpit.dataset import (CSV_HEADER, Action, Dataset, DeviceSpec, Provenance, Task,
                              TouchPoint, device_map, parse_point, partition_by_device,
                              read_catalog, read_csv, subsample_users, user_counts_by_device,
                              write_catalog, write_csv)
from touchpit.errors import MalformedRow, NotEnoughUsers, UnknownDevice

from conftest import IPHONE7, session, swipe

HEADER = ",".join(CSV_HEADER) + "\n"


def _csv(*rows):
    return io.StringIO(HEADER + "".join(",".join(map(str, r)) + "\n" for r in rows))


def test_parse_reference_row():
    pt = parse_point("1334789740143,255,327,0.42,0.13333336,FINGER_DOWN".split(","))
    assert pt == TouchPoint(1334789740143, 255, 327, 0.42, 0.13333336, Action.FINGER_DOWN)


@pytest.mark.parametrize("token,action", [("DOWN", Action.FINGER_DOWN), ("MOVE", Action.MOVE),
                                          ("UP", Action.FINGER_UP)])
def test_parse_short_actions(token, action):
    assert parse_point(["1", "2", "3", "0", "1", token]).action is action


@pytest.mark.parametrize("fields", [
    ["1", "2", "3", "1.5", "0.1", "MOVE"],     # pressure > 1
    ["1", "2", "3", "0.5", "-0.1", "MOVE"],    # area < 0
    ["1", "-2", "3", "0.5", "0.1", "MOVE"],    # negative x
    ["1", "2", "3", "0.5", "0.1", "HOVER"],    # unknown action
    ["1.5", "2", "3", "0.5", "0.1", "MOVE"],   # fractional timestamp
    ["1", "2", "3", "nan", "0.1", "MOVE"],
])
def test_parse_rejects(fields):
    with pytest.raises(MalformedRow):
        parse_point(fields, line=7)


def test_empty_file_gives_empty_dataset():
    d, rep = read_csv(io.StringIO(""))
    assert d.users == {} and rep.rows == 0
    d, _ = read_csv(io.StringIO(HEADER))
    assert d.users == {}


def test_pressure_out_of_range_is_malformed():
    with pytest.raises(MalformedRow):
        read_csv(_csv(("u", "s", "iPhone 7", "GALLERY", 1, 2, 3, 1.5, 0.1, "DOWN")))


def test_unknown_device():
    with pytest.raises(UnknownDevice):
        read_csv(_csv(("u", "s", "Nokia 3310", "GALLERY", 1, 2, 3, 0.5, 0.1, "DOWN")))


def test_point_outside_screen():
    with pytest.raises(MalformedRow):
        read_csv(_csv(("u", "s", "iPhone 7", "GALLERY", 1, 750, 3, 0.5, 0.1, "DOWN")))


def test_bad_column_count_and_lenient_mode():
    src = _csv(("u", "s", "iPhone 7", "GALLERY", 1, 2, 3, 0.5, 0.1, "DOWN"),
               ("u", "s", "iPhone 7", "GALLERY", 2, 2, 3, 0.5),
               ("u", "s", "iPhone 7", "GALLERY", 3, 2, 3, 0.5, 0.1, "UP"))
    with pytest.raises(MalformedRow) as ei:
        read_csv(src)
    assert ei.value.line == 3
    src.seek(0)
    d, rep = read_csv(src, strict=False)
    assert len(rep.errors) == 1 and len(d.users["u"][0].points) == 2


def test_backward_timestamp_dropped_with_warning(caplog):
    src = _csv(("u", "s", "iPhone 7", "GALLERY", 10, 2, 3, 0.5, 0.1, "DOWN"),
               ("u", "s", "iPhone 7", "GALLERY", 5, 4, 3, 0.5, 0.1, "MOVE"),
               ("u", "s", "iPhone 7", "GALLERY", 20, 9, 3, 0.5, 0.1, "UP"))
    d, rep = read_csv(src)
    assert rep.dropped_points == 1
    assert d.users["u"][0].points["t"].tolist() == [10, 20]
    assert any("backwards" in r.message for r in caplog.records)


def test_sessions_ordered_by_first_timestamp():
    src = _csv(("u", "late", "iPhone 7", "GALLERY", 500, 2, 3, 0.5, 0.1, "DOWN"),
               ("u", "early", "iPhone 7", "GALLERY", 100, 2, 3, 0.5, 0.1, "DOWN"))
    d, _ = read_csv(src)
    assert [(s.session_id, s.ordinal) for s in d.users["u"]] == [("early", 0), ("late", 1)]


def test_session_changing_device_rejected():
    src = _csv(("u", "s", "iPhone 7", "GALLERY", 1, 2, 3, 0.5, 0.1, "DOWN"),
               ("u", "s", "iPhone X", "GALLERY", 2, 2, 3, 0.5, 0.1, "UP"))
    with pytest.raises(MalformedRow):
        read_csv(src)


def test_round_trip(small_synth):
    buf = io.StringIO()
    write_csv(small_synth, buf)
    text = buf.getvalue()
    assert text.startswith(HEADER) and "\r" not in text
    back, rep = read_csv(io.StringIO(text))
    assert rep.ok and rep.dropped_points == 0
    assert back.users == small_synth.users
    buf2 = io.StringIO()
    write_csv(back, buf2)
    assert buf2.getvalue() == text


_pt = st.tuples(st.integers(0, 10**6), st.integers(0, 749), st.integers(0, 1333),
                st.floats(0, 1), st.floats(0, 1), st.sampled_from(list(Action)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(_pt, min_size=1, max_size=12), min_size=1, max_size=4))
def test_round_trip_property(sessions):
    sess = []
    for i, rows in enumerate(sessions):
        rows = sorted(rows, key=lambda r: r[0])
        rows = [(t + i * 10**7, *rest) for t, *rest in rows]
        sess.append(session(f"s{i}", i, rows))
    d = Dataset({"user": tuple(sess)})
    buf = io.StringIO()
    write_csv(d, buf)
    back, _ = read_csv(io.StringIO(buf.getvalue()))
    assert back.users == d.users


def test_catalog_round_trip(tmp_path):
    devs = [DeviceSpec("Tab", 800, 1280, 10.1, 149.5), IPHONE7]
    p = tmp_path / "cat.csv"
    write_catalog(devs, p)
    assert read_catalog(p) == devs


def test_device_spec_validation():
    with pytest.raises(Exception):
        DeviceSpec("bad", 0, 100, 5.0, 300)


def test_builtin_catalog_contains_study_devices():
    cat = device_map(None)
    for name in ("iPhone 7", "iPhone X", "OnePlus 5", "MOTO G 3", "BLU VIVO 6"):
        assert name in cat


def _two_device_user():
    x = device_map(None)["iPhone X"]
    a = session("a", 0, swipe(0, 500, 600, -200, 0))
    b = session("b", 1, swipe(10**6, 500, 600, -200, 0), device=x)
    c = session("c", 2, swipe(2 * 10**6, 500, 600, -200, 0))
    return Dataset({"u1": (a, b, c), "u2": (session("z", 0, swipe(0, 400, 500, -150, 5)),)})


def test_partition_single_device_is_identity(small_synth):
    parts = partition_by_device(small_synth)
    assert list(parts) == ["iPhone 7"]
    assert parts["iPhone 7"].users == small_synth.users


def test_partition_multi_device_conserves_sessions():
    d = _two_device_user()
    parts = partition_by_device(d)
    assert set(parts) == {"iPhone 7", "iPhone X"}
    assert "u1" in parts["iPhone 7"].users and "u1" in parts["iPhone X"].users
    assert sum(p.n_sessions() for p in parts.values()) == d.n_sessions()
    # ordinals stay contiguous inside each partition
    assert [s.ordinal for s in parts["iPhone 7"].users["u1"]] == [0, 1]
    ids = {p: {s.session_id for _, s in parts[p].sessions()} for p in parts}
    assert ids["iPhone 7"].isdisjoint(ids["iPhone X"])
    assert sum(p.n_points() for p in parts.values()) == d.n_points()


def test_user_counts_by_device(multi_device_synth):
    counts = user_counts_by_device(multi_device_synth)
    assert counts == {"iPhone 7": 6, "iPhone X": 6, "OnePlus 5": 6}


def test_subsample_all_and_errors(small_synth):
    rng = np.random.default_rng(0)
    same = subsample_users(small_synth, len(small_synth.users), rng)
    assert same.user_ids == small_synth.user_ids
    with pytest.raises(NotEnoughUsers):
        subsample_users(small_synth, 13, rng)


def test_subsample_deterministic(small_synth):
    a = subsample_users(small_synth, 5, np.random.default_rng(42))
    b = subsample_users(small_synth, 5, np.random.default_rng(42))
    assert a.user_ids == b.user_ids and len(a.users) == 5


def test_subsample_uniform_binomial_oracle():
    # n=40 from 470 over 1000 seeds: each user's frequency within 3 sigma of 40/470
    users = {f"u{i:03d}": (session("s", 0, swipe(0, 400, 500, -150, 0)),) for i in range(470)}
    d = Dataset(users)
    counts = dict.fromkeys(users, 0)
    for seed in range(1000):
        for u in subsample_users(d, 40, np.random.default_rng(seed)).users:
            counts[u] += 1
    p = 40 / 470
    sigma = np.sqrt(1000 * p * (1 - p))
    dev = np.abs(np.array(list(counts.values())) - 1000 * p)
    # a Bonferroni-style allowance: 3 sigma per user plus a handful of excursions
    assert np.mean(dev <= 3 * sigma) >= 0.99
    assert dev.max() <= 4.5 * sigma


def test_dataset_invariants():
    with pytest.raises(Exception):
        Dataset({"u": ()})
    s = session("s", 1, swipe(0, 400, 500, -150, 0))
    with pytest.raises(Exception):
        Dataset({"u": (s,)})
    assert Dataset({}).provenance is Provenance.INGESTED
    assert Task("SOCIAL_FEED") is Task.SOCIAL_FEED
