"""Stroke segmentation, tap filtering and direction labelling."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Action, DeviceSpec, SessionRecord

MIN_POINTS = 3
MIN_DEVIATION_PX = 5.0


class Direction(enum.Enum):
    UP = "UP"
    DOWN = "DOWN"
    LEFT = "LEFT"
    RIGHT = "RIGHT"


@dataclass(frozen=True, eq=False)
class Stroke:
    points: np.ndarray = field(repr=False)
    user_id: str
    session_ordinal: int
    device: DeviceSpec
    start_index_in_session: int
    direction: Direction | None = None

    def __len__(self):
        return len(self.points)

    @property
    def start_ms(self) -> int:
        return int(self.points["t"][0])

    @property
    def end_ms(self) -> int:
        return int(self.points["t"][-1])


@dataclass
class SegmentReport:
    strokes: int = 0
    unterminated: int = 0
    stray_points: int = 0
    duplicate_points: int = 0


def _dedup(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Keep the last point of each equal-timestamp run; the touch-down point is kept
    in preference to anything sharing its timestamp. Returns (kept, dropped)."""
    t = pts["t"]
    n = len(pts)
    keep = np.ones(n, dtype=bool)
    if n > 1:
        keep[:-1] = t[:-1] != t[1:]
        lead = t == t[0]
        if lead.sum() > 1:
            keep[lead] = False
            keep[0] = True
    return pts[keep], pts[~keep]


def segment_with_discards(session: SessionRecord, user_id: str = "",
                          report: SegmentReport | None = None):
    """Segment a session; also return every point that did not end up in a stroke."""
    pts = session.points
    actions = pts["action"].tolist()
    DOWN, MOVE = int(Action.FINGER_DOWN), int(Action.MOVE)
    strokes: list[Stroke] = []
    discarded: list[np.ndarray] = []
    open_at = -1
    rep = report if report is not None else SegmentReport()
    for i, a in enumerate(actions):
        if a == DOWN:
            if open_at >= 0:
                rep.unterminated += 1
                discarded.append(pts[open_at:i])
            open_at = i
        elif a == MOVE:
            if open_at < 0:
                rep.stray_points += 1
                discarded.append(pts[i:i + 1])
        else:
            if open_at < 0:
                rep.stray_points += 1
                discarded.append(pts[i:i + 1])
                continue
            kept, dropped = _dedup(pts[open_at:i + 1])
            rep.duplicate_points += len(dropped)
            if len(dropped):
                discarded.append(dropped)
            if len(kept) < 2:
                # zero-duration span: nothing left between touch-down and lift-off
                discarded.append(kept)
            else:
                strokes.append(Stroke(kept, user_id, session.ordinal, session.device,
                                      len(strokes)))
            open_at = -1
    if open_at >= 0:
        rep.unterminated += 1
        discarded.append(pts[open_at:])
    rep.strokes += len(strokes)
    empty = np.empty(0, dtype=pts.dtype)
    return strokes, (np.concatenate(discarded) if discarded else empty)


def segment(session: SessionRecord, user_id: str = "",
            report: SegmentReport | None = None) -> list[Stroke]:
    """One stroke per touch-down..lift-off span, in chronological order.

    A touch-down that arrives while a span is still open discards the open span
    as unterminated, as does a span still open at the end of the session.
    """
    return segment_with_discards(session, user_id, report)[0]


def max_deviation_px(stroke: Stroke) -> float:
    x = stroke.points["x"].astype(np.float64)
    y = stroke.points["y"].astype(np.float64)
    return float(np.max(np.hypot(x - x[0], y - y[0])))


def keep_stroke(stroke: Stroke) -> bool:
    return len(stroke) >= MIN_POINTS and max_deviation_px(stroke) > MIN_DEVIATION_PX


def filter_strokes(strokes) -> list[Stroke]:
    """Drop taps: strokes with fewer than 3 points or never leaving a 5 px radius."""
    return [s for s in strokes if keep_stroke(s)]


def label_direction(stroke: Stroke) -> Direction:
    # Screen y grows downward; |dx| == |dy| counts as horizontal.
    x, y = stroke.points["x"], stroke.points["y"]
    dx = int(x[-1]) - int(x[0])
    dy = int(y[-1]) - int(y[0])
    if abs(dx) >= abs(dy):
        return Direction.LEFT if dx < 0 else Direction.RIGHT
    return Direction.UP if dy < 0 else Direction.DOWN


def session_strokes(session: SessionRecord, user_id: str = "",
                    report: SegmentReport | None = None) -> list[Stroke]:
    """segment -> filter -> label for one session."""
    return [replace(s, direction=label_direction(s))
            for s in filter_strokes(segment(session, user_id, report))]
