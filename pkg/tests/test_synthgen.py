import io

import numpy as np
import pytest

from touchpit.dataset import Provenance, read_csv, write_csv
from touchpit.errors import InvalidConfig
from touchpit.experiments import ExperimentSpec, Variant, evaluate_population, run, user_eers
from touchpit.features import build_store
from touchpit.metrics import welch_test
from touchpit.preprocess import SegmentReport, keep_stroke, segment
from touchpit.protocol import ProtocolConfig, SplitStrategy
from touchpit.synthgen import SynthConfig, generate


def test_same_seed_identical(small_synth):
    again = generate(SynthConfig(n_users=12, sessions_per_user=3, strokes_per_session=20, seed=5))
    assert again.users == small_synth.users
    a, b = io.StringIO(), io.StringIO()
    write_csv(small_synth, a)
    write_csv(again, b)
    assert a.getvalue() == b.getvalue()
    other = generate(SynthConfig(n_users=12, sessions_per_user=3, strokes_per_session=20, seed=6))
    assert other.users != small_synth.users


def test_shape_and_provenance(small_synth):
    assert small_synth.provenance is Provenance.SYNTHETIC
    assert len(small_synth.users) == 12
    assert all(len(s) == 3 for s in small_synth.users.values())


def test_every_stroke_survives_filter_and_values_clipped():
    d = generate(SynthConfig(n_users=6, sessions_per_user=2, strokes_per_session=25, seed=1,
                             sigma_within=2.0, sigma_session=1.0, device_offset=1.5,
                             devices=("iPhone 7", "MOTO G 3"),
                             directions=(("LEFT", 1), ("RIGHT", 1), ("UP", 1), ("DOWN", 1))))
    for _, s in d.sessions():
        rep = SegmentReport()
        strokes = segment(s, report=rep)
        assert len(strokes) == 25 and rep.unterminated == 0 and rep.duplicate_points == 0
        assert all(keep_stroke(st) for st in strokes)
        p = s.points
        assert np.all((p["pressure"] >= 0) & (p["pressure"] <= 1))
        assert np.all((p["area"] >= 0) & (p["area"] <= 1))
        assert np.all(p["x"] < s.device.screen_width) and np.all(p["y"] < s.device.screen_height)


def test_output_passes_ingest(small_synth):
    buf = io.StringIO()
    write_csv(small_synth, buf)
    back, rep = read_csv(io.StringIO(buf.getvalue()), strict=False)
    assert rep.ok and rep.dropped_points == 0 and back.users == small_synth.users


@pytest.mark.parametrize("kw", [dict(n_users=0), dict(sigma_within=-1.0),
                                dict(sampling_rate=0.0), dict(devices=()),
                                dict(devices=("Nokia 3310",)),
                                dict(directions=(("LEFT", -1.0),)),
                                dict(directions=(("SIDEWAYS", 1.0),))])
def test_invalid_configs(kw):
    with pytest.raises((InvalidConfig, ValueError)):
        generate(SynthConfig(**kw))


def _baseline_eer(cfg):
    recs = run(ExperimentSpec(Variant.BASELINE, reps=1), generate(cfg))
    return recs[0].payload["mean_eer"]


def test_separable_users_low_eer():
    assert _baseline_eer(SynthConfig(n_users=20, sessions_per_user=3, strokes_per_session=25,
                                     sigma_within=0.2, seed=2)) < 0.05


def test_no_identity_signal_gives_chance_eer():
    e = _baseline_eer(SynthConfig(n_users=20, sessions_per_user=3, strokes_per_session=25,
                                  sigma_between=0.0, seed=2))
    assert abs(e - 0.5) <= 0.05


def _split_gap(sigma_sess, seed):
    d = generate(SynthConfig(n_users=12, sessions_per_user=4, strokes_per_session=20,
                             sigma_session=sigma_sess, seed=seed))
    store = build_store(d)
    out = {}
    for strat in (SplitStrategy.RANDOM, SplitStrategy.DEDICATED_SESSIONS_CONTIG):
        evs = evaluate_population(store, store.user_ids, ProtocolConfig(split_strategy=strat, seed=seed))
        out[strat] = np.mean(list(user_eers(evs).values()))
    return out[SplitStrategy.DEDICATED_SESSIONS_CONTIG] - out[SplitStrategy.RANDOM]


@pytest.mark.slow
def test_session_drift_widens_split_gap():
    # 20 seeds per level; the gap must grow with the drift scale
    levels = (0.0, 0.4, 0.8)
    gaps = {s: [_split_gap(s, seed) for seed in range(20)] for s in levels}
    means = [np.mean(gaps[s]) for s in levels]
    assert means[0] < means[1] < means[2]
    r = welch_test(gaps[0.8], gaps[0.0])
    assert r.t > 0 and r.p_value < 0.01
