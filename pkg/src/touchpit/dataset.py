"""Data model, CSV ingestion/serialization and dataset partitioning.

Points of a session are held as a numpy structured array (``POINT_DTYPE``)
rather than a list of objects; :class:`TouchPoint` is the row-level view
used when parsing and for inspection.
"""
from __future__ import annotations

import csv
import enum
import io
import logging
import math
import sys
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, TextIO

import numpy as np

from .errors import MalformedRow, NotEnoughUsers, UnknownDevice

log = logging.getLogger(__name__)

CSV_HEADER = (
    "user_id", "session_id", "device_model", "task",
    "timestamp_ms", "x_px", "y_px", "pressure", "area", "action",
)
CATALOG_HEADER = ("model_name", "width_px", "height_px", "diagonal_in", "ppi")


class Action(enum.IntEnum):
    FINGER_DOWN = 0
    MOVE = 1
    FINGER_UP = 2


_ACTION_NAMES = {
    "DOWN": Action.FINGER_DOWN, "FINGER_DOWN": Action.FINGER_DOWN,
    "MOVE": Action.MOVE,
    "UP": Action.FINGER_UP, "FINGER_UP": Action.FINGER_UP,
}
_ACTION_OUT = {Action.FINGER_DOWN: "DOWN", Action.MOVE: "MOVE", Action.FINGER_UP: "UP"}


class Task(enum.Enum):
    SOCIAL_FEED = "SOCIAL_FEED"
    GALLERY = "GALLERY"


class Provenance(enum.Enum):
    INGESTED = "INGESTED"
    SYNTHETIC = "SYNTHETIC"


POINT_DTYPE = np.dtype([
    ("t", np.int64),
    ("x", np.int32),
    ("y", np.int32),
    ("pressure", np.float64),
    ("area", np.float64),
    ("action", np.int8),
])


@dataclass(frozen=True)
class TouchPoint:
    timestamp: int
    x: int
    y: int
    pressure: float
    area: float
    action: Action


@dataclass(frozen=True)
class DeviceSpec:
    model_name: str
    screen_width: int
    screen_height: int
    diagonal: float
    ppi: float

    def __post_init__(self):
        if self.screen_width <= 0 or self.screen_height <= 0 or self.ppi <= 0:
            raise ValueError(f"invalid device spec {self.model_name!r}")


# Portrait orientation: width is the short side.
BUILTIN_DEVICES = (
    DeviceSpec("iPhone 6S", 750, 1334, 4.7, 326),
    DeviceSpec("iPhone 6S Plus", 1080, 1920, 5.5, 401),
    DeviceSpec("iPhone 7", 750, 1334, 4.7, 326),
    DeviceSpec("iPhone 7 Plus", 1080, 1920, 5.5, 401),
    DeviceSpec("iPhone 8", 750, 1334, 4.7, 326),
    DeviceSpec("iPhone 8 Plus", 1080, 1920, 5.5, 401),
    DeviceSpec("iPhone X", 1125, 2436, 5.8, 458),
    DeviceSpec("iPhone XS", 1125, 2436, 5.8, 458),
    DeviceSpec("iPhone XS Max", 1242, 2688, 6.5, 458),
    DeviceSpec("OnePlus 5", 1080, 1920, 5.5, 401),
    DeviceSpec("BLU VIVO 6", 1080, 1920, 5.5, 401),
    DeviceSpec("MOTO G 3", 720, 1280, 5.0, 294),
)


@dataclass(frozen=True, eq=False)
class SessionRecord:
    session_id: str
    ordinal: int
    task: Task
    device: DeviceSpec
    points: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, SessionRecord):
            return NotImplemented
        return (
            self.session_id == other.session_id
            and self.ordinal == other.ordinal
            and self.task == other.task
            and self.device == other.device
            and self.points.dtype == other.points.dtype
            and np.array_equal(self.points, other.points)
        )

    def __len__(self):
        return len(self.points)

    def touch_points(self) -> Iterator[TouchPoint]:
        for row in self.points:
            yield TouchPoint(int(row["t"]), int(row["x"]), int(row["y"]),
                             float(row["pressure"]), float(row["area"]),
                             Action(int(row["action"])))


@dataclass(frozen=True)
class Dataset:
    users: Mapping[str, tuple[SessionRecord, ...]]
    provenance: Provenance = Provenance.INGESTED

    def __post_init__(self):
        for uid, sessions in self.users.items():
            if not sessions:
                raise ValueError(f"user {uid!r} has no sessions")
            if [s.ordinal for s in sessions] != list(range(len(sessions))):
                raise ValueError(f"user {uid!r}: session ordinals not contiguous from 0")

    @property
    def user_ids(self) -> list[str]:
        return list(self.users)

    def n_sessions(self) -> int:
        return sum(len(s) for s in self.users.values())

    def n_points(self) -> int:
        return sum(len(s) for ss in self.users.values() for s in ss)

    def devices(self) -> list[str]:
        return sorted({s.device.model_name for ss in self.users.values() for s in ss})

    def sessions(self) -> Iterator[tuple[str, SessionRecord]]:
        for uid, ss in self.users.items():
            for s in ss:
                yield uid, s


@dataclass
class IngestReport:
    rows: int = 0
    dropped_points: int = 0
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _renumber(sessions: Iterable[SessionRecord]) -> tuple[SessionRecord, ...]:
    def key(s):
        first = int(s.points["t"].min()) if len(s.points) else math.inf
        return (first, s.session_id)

    ordered = sorted(sessions, key=key)
    return tuple(
        SessionRecord(s.session_id, i, s.task, s.device, s.points)
        for i, s in enumerate(ordered)
    )


def _parse_float(text: str, name: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise MalformedRow(line, f"{name} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise MalformedRow(line, f"{name} is not finite")
    return v


def _parse_int(text: str, name: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise MalformedRow(line, f"{name} is not an integer: {text!r}") from None


def parse_point(fields: list[str], line: int = 0) -> TouchPoint:
    """Parse ``timestamp,x,y,pressure,area,action`` into a TouchPoint."""
    if len(fields) != 6:
        raise MalformedRow(line, f"expected 6 point fields, got {len(fields)}")
    t = _parse_int(fields[0], "timestamp", line)
    x = _parse_int(fields[1], "x", line)
    y = _parse_int(fields[2], "y", line)
    p = _parse_float(fields[3], "pressure", line)
    a = _parse_float(fields[4], "area", line)
    action = _ACTION_NAMES.get(fields[5].strip())
    if action is None:
        raise MalformedRow(line, f"unknown action {fields[5]!r}")
    if x < 0 or y < 0:
        raise MalformedRow(line, "negative coordinate")
    if not 0.0 <= p <= 1.0:
        raise MalformedRow(line, f"pressure {p} outside [0, 1]")
    if not 0.0 <= a <= 1.0:
        raise MalformedRow(line, f"area {a} outside [0, 1]")
    return TouchPoint(t, x, y, p, a, action)


def _open_text(source) -> tuple[TextIO, bool]:
    if isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        return source, False
    if str(source) == "-":
        return sys.stdin, False
    return open(source, newline="", encoding="utf-8"), True


def device_map(catalog: Iterable[DeviceSpec] | None) -> dict[str, DeviceSpec]:
    return {d.model_name: d for d in (BUILTIN_DEVICES if catalog is None else catalog)}


def read_csv(source, device_catalog: Iterable[DeviceSpec] | None = None,
             strict: bool = True) -> tuple[Dataset, IngestReport]:
    """Read a touch CSV into a Dataset.

    With ``strict`` the first malformed row raises; otherwise the row is
    skipped and recorded in the report.
    """
    devices = device_map(device_catalog)
    report = IngestReport()
    fh, close = _open_text(source)
    # (user, session) -> [device, task, rows]
    groups: dict[tuple[str, str], list] = {}
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return Dataset({}), report
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise MalformedRow(1, f"bad header {header!r}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            report.rows += 1
            try:
                if len(row) != len(CSV_HEADER):
                    raise MalformedRow(line, f"expected {len(CSV_HEADER)} columns, got {len(row)}")
                uid, sid, model, task = row[0], row[1], row[2], row[3]
                dev = devices.get(model)
                if dev is None:
                    raise UnknownDevice(f"line {line}: unknown device model {model!r}")
                try:
                    task_v = Task(task)
                except ValueError:
                    raise MalformedRow(line, f"unknown task {task!r}") from None
                pt = parse_point(row[4:], line)
                if pt.x >= dev.screen_width or pt.y >= dev.screen_height:
                    raise MalformedRow(line, f"point ({pt.x},{pt.y}) outside {model} screen")
                g = groups.get((uid, sid))
                if g is None:
                    g = groups[(uid, sid)] = [dev, task_v, [], line]
                elif g[0] is not dev or g[1] is not task_v:
                    raise MalformedRow(line, f"session {sid!r} changes device or task")
                rows = g[2]
                if rows and pt.timestamp < rows[-1][0]:
                    log.warning("line %d: timestamp goes backwards in session %r; point dropped",
                                line, sid)
                    report.dropped_points += 1
                    continue
                rows.append((pt.timestamp, pt.x, pt.y, pt.pressure, pt.area, int(pt.action)))
            except (MalformedRow, UnknownDevice) as exc:
                if strict:
                    raise
                report.errors.append(str(exc))
    finally:
        if close:
            fh.close()

    per_user: dict[str, list[SessionRecord]] = {}
    for (uid, sid), (dev, task_v, rows, _) in groups.items():
        pts = np.array(rows, dtype=POINT_DTYPE)
        per_user.setdefault(uid, []).append(SessionRecord(sid, 0, task_v, dev, pts))
    users = {uid: _renumber(per_user[uid]) for uid in sorted(per_user)}
    return Dataset(users, Provenance.INGESTED), report


def ingest(path, device_catalog: Iterable[DeviceSpec] | None = None) -> Dataset:
    return read_csv(path, device_catalog, strict=True)[0]


def _fmt_float(v: float) -> str:
    return repr(float(v))


def write_csv(d: Dataset, dest) -> None:
    """Serialize in the ingest schema; ``ingest`` of the output reproduces ``d``."""
    if hasattr(dest, "write"):
        fh, close = dest, False
    elif str(dest) == "-":
        fh, close = sys.stdout, False
    else:
        fh, close = open(dest, "w", newline="", encoding="utf-8"), True
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for uid, s in d.sessions():
            pts = s.points
            for i in range(len(pts)):
                r = pts[i]
                w.writerow((uid, s.session_id, s.device.model_name, s.task.value,
                            int(r["t"]), int(r["x"]), int(r["y"]),
                            _fmt_float(r["pressure"]), _fmt_float(r["area"]),
                            _ACTION_OUT[Action(int(r["action"]))]))
    finally:
        if close:
            fh.close()


def read_catalog(path) -> list[DeviceSpec]:
    fh, close = _open_text(path)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CATALOG_HEADER:
            raise MalformedRow(1, f"bad catalog header {header!r}")
        out = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise MalformedRow(line, "catalog rows need 5 columns")
            try:
                out.append(DeviceSpec(row[0], int(row[1]), int(row[2]),
                                      float(row[3]), float(row[4])))
            except ValueError as exc:
                raise MalformedRow(line, str(exc)) from None
        return out
    finally:
        if close:
            fh.close()


def write_catalog(devices: Iterable[DeviceSpec], dest) -> None:
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_HEADER)
        for d in devices:
            w.writerow((d.model_name, d.screen_width, d.screen_height,
                        repr(float(d.diagonal)), repr(float(d.ppi))))


def partition_by_device(d: Dataset) -> dict[str, Dataset]:
    """Split into per-device datasets; session ordinals are renumbered per partition."""
    buckets: dict[str, dict[str, list[SessionRecord]]] = {}
    for uid, s in d.sessions():
        buckets.setdefault(s.device.model_name, {}).setdefault(uid, []).append(s)
    return {
        model: Dataset({uid: _renumber(ss) for uid, ss in users.items()}, d.provenance)
        for model, users in sorted(buckets.items())
    }


def subsample_users(d: Dataset, n: int, rng: np.random.Generator) -> Dataset:
    ids = d.user_ids
    if n > len(ids):
        raise NotEnoughUsers(f"asked for {n} users, dataset has {len(ids)}")
    chosen = set(rng.choice(len(ids), size=n, replace=False).tolist())
    return Dataset({u: d.users[u] for i, u in enumerate(ids) if i in chosen}, d.provenance)


def user_counts_by_device(d: Dataset) -> Counter:
    return Counter({m: len(p.users) for m, p in partition_by_device(d).items()})
