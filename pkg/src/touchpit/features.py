"""Per-stroke feature extraction, standardization and the per-user feature store."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .errors import DegenerateStroke, EmptyTrainingSet
from .preprocess import Direction, SegmentReport, Stroke, session_strokes

FEATURE_NAMES = (
    "inter_stroke_time",
    "duration",
    "start_x",
    "start_y",
    "stop_x",
    "stop_y",
    "end_to_end_distance",
    "mean_resultant_length",
    "end_to_end_direction",
    "velocity_p20",
    "velocity_p50",
    "velocity_p80",
    "accel_p20",
    "accel_p50",
    "accel_p80",
    "median_velocity_last3",
    "max_line_deviation",
    "deviation_p20",
    "deviation_p50",
    "deviation_p80",
    "mean_pair_direction",
    "trajectory_length",
    "distance_ratio",
    "mean_velocity",
    "median_accel_first5",
    "mid_pressure",
    "mid_area",
)
N_FEATURES = len(FEATURE_NAMES)
_PCTS = (20.0, 50.0, 80.0)


def percentiles(v: np.ndarray, q=_PCTS) -> list[float]:
    """Linear interpolation between closest ranks; an empty input gives zeros."""
    if len(v) == 0:
        return [0.0] * len(q)
    return np.percentile(v, q).tolist()


def _median(v: np.ndarray) -> float:
    return percentiles(v, (50.0,))[0]


def extract(stroke: Stroke, prev_stroke_end: int | None = None) -> np.ndarray:
    """Feature vector of one stroke, ordered as ``FEATURE_NAMES``.

    Positions are divided by the screen width/height before any geometry, so
    distances and velocities are in screen fractions (per ms, per ms^2).
    """
    pts = stroke.points
    n = len(pts)
    t = pts["t"]
    if n < 2:
        raise DegenerateStroke("stroke needs at least 2 points")
    x = pts["x"] / stroke.device.screen_width
    y = pts["y"] / stroke.device.screen_height

    dt = np.diff(t).astype(np.float64)
    if np.any(dt <= 0):
        raise DegenerateStroke("timestamps must be strictly increasing")
    dx, dy = np.diff(x), np.diff(y)
    seg = np.hypot(dx, dy)
    moving = seg > 0
    if not moving.any():
        raise DegenerateStroke("all points coincide")

    vel = seg / dt
    acc = np.diff(vel) / (0.5 * (dt[:-1] + dt[1:]))

    ux, uy = dx[moving] / seg[moving], dy[moving] / seg[moving]
    mux, muy = ux.mean(), uy.mean()

    cx, cy = x[-1] - x[0], y[-1] - y[0]
    chord = math.hypot(cx, cy)
    if chord > 0:
        dev = np.abs((x - x[0]) * cy - (y - y[0]) * cx) / chord
    else:
        dev = np.hypot(x - x[0], y - y[0])

    e2e_dir = math.atan2(cy, cx)
    if e2e_dir == -math.pi:
        e2e_dir = math.pi
    duration = float(t[-1] - t[0])
    traj = float(seg.sum())
    mid = (n - 1) // 2

    return np.array([
        0.0 if prev_stroke_end is None else float(int(t[0]) - int(prev_stroke_end)),
        duration,
        x[0], y[0], x[-1], y[-1],
        chord,
        min(1.0, math.hypot(mux, muy)),
        e2e_dir,
        *percentiles(vel),
        *percentiles(acc),
        _median(vel[-3:]),
        float(dev.max()),
        *percentiles(dev),
        math.atan2(muy, mux),
        traj,
        min(1.0, chord / traj),
        traj / duration,
        _median(acc[:5]),
        float(pts["pressure"][mid]),
        float(pts["area"][mid]),
    ], dtype=np.float64)


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(train: np.ndarray) -> Scaler:
    X = np.asarray(train, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyTrainingSet("cannot fit a scaler on an empty matrix")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    const = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    # constant columns map to exact zeros
    mean = np.where(const, X[0], mean)
    std = np.where(const, 1.0, std)
    return Scaler(mean, std)


def apply_scaler(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - scaler.mean) / scaler.std


DIRECTIONS = (Direction.UP, Direction.DOWN, Direction.LEFT, Direction.RIGHT)
_DIR_CODE = {d: i for i, d in enumerate(DIRECTIONS)}


@dataclass(frozen=True, eq=False)
class UserStrokes:
    """Chronologically ordered feature rows of one user."""

    features: np.ndarray
    session: np.ndarray
    direction: np.ndarray
    device: np.ndarray
    start_ms: np.ndarray

    def __len__(self):
        return len(self.features)

    def take(self, mask_or_idx) -> "UserStrokes":
        return UserStrokes(self.features[mask_or_idx], self.session[mask_or_idx],
                           self.direction[mask_or_idx], self.device[mask_or_idx],
                           self.start_ms[mask_or_idx])

    def session_ids(self) -> np.ndarray:
        return np.unique(self.session)


@dataclass(frozen=True, eq=False)
class FeatureStore:
    users: Mapping[str, UserStrokes]
    devices: tuple[str, ...]

    @property
    def user_ids(self) -> list[str]:
        return list(self.users)

    def __len__(self):
        return len(self.users)

    def view(self, direction: Direction | None = None, device: str | None = None,
             users: Iterable[str] | None = None, min_strokes: int = 1) -> "FeatureStore":
        keep = self.users if users is None else {u: self.users[u] for u in users}
        out = {}
        for uid, us in keep.items():
            mask = np.ones(len(us), dtype=bool)
            if direction is not None:
                mask &= us.direction == _DIR_CODE[direction]
            if device is not None:
                mask &= us.device == self.devices.index(device)
            if mask.sum() >= min_strokes:
                out[uid] = us if mask.all() else us.take(mask)
        return FeatureStore(out, self.devices)

    def sessions_subset(self, pick) -> "FeatureStore":
        """Keep, per user, the sessions chosen by ``pick(sorted_session_ids)``."""
        out = {}
        for uid, us in self.users.items():
            chosen = pick(us.session_ids())
            mask = np.isin(us.session, chosen)
            if mask.any():
                out[uid] = us.take(mask)
        return FeatureStore(out, self.devices)

    def n_strokes(self) -> int:
        return sum(len(u) for u in self.users.values())


def build_store(d: Dataset, report: SegmentReport | None = None) -> FeatureStore:
    """Preprocess and extract every session of ``d``.

    Inter-stroke time is measured from the previous kept stroke of the same
    session and is 0 for a session's first stroke.
    """
    devices = tuple(d.devices())
    users = {}
    for uid, sessions in d.users.items():
        rows, sess, dirs, devs, starts = [], [], [], [], []
        for s in sessions:
            prev_end = None
            dev_code = devices.index(s.device.model_name)
            for st in session_strokes(s, uid, report):
                rows.append(extract(st, prev_end))
                prev_end = st.end_ms
                sess.append(s.ordinal)
                dirs.append(_DIR_CODE[st.direction])
                devs.append(dev_code)
                starts.append(st.start_ms)
        if rows:
            users[uid] = UserStrokes(np.vstack(rows), np.array(sess, dtype=np.int64),
                                     np.array(dirs, dtype=np.int8),
                                     np.array(devs, dtype=np.int16),
                                     np.array(starts, dtype=np.int64))
    return FeatureStore(users, devices)


def write_feature_matrix(store: FeatureStore, dest) -> None:
    """Feature dump: identifying columns followed by the canonical feature names."""
    fh = dest if hasattr(dest, "write") else open(dest, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("user_id", "session_ordinal", "direction", "device_model") + FEATURE_NAMES)
        for uid, us in store.users.items():
            for i in range(len(us)):
                w.writerow((uid, int(us.session[i]), DIRECTIONS[us.direction[i]].value,
                            store.devices[us.device[i]],
                            *(repr(float(v)) for v in us.features[i])))
    finally:
        if fh is not dest:
            fh.close()


def feature_table(strokes: Sequence[Stroke]) -> np.ndarray:
    """Extract a list of strokes from one session, chaining inter-stroke times."""
    out, prev = [], None
    for s in strokes:
        out.append(extract(s, prev))
        prev = s.end_ms
    return np.vstack(out) if out else np.empty((0, N_FEATURES))
