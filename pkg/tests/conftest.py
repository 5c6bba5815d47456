import numpy as np
import pytest

from touchpit.dataset import (POINT_DTYPE, Action, Dataset, SessionRecord, Task, device_map)
from touchpit.features import build_store
from touchpit.synthgen import SynthConfig, generate

IPHONE7 = device_map(None)["iPhone 7"]


def make_points(rows):
    """rows: (t, x, y, pressure, area, action) tuples."""
    return np.array([tuple(r[:5]) + (int(r[5]),) for r in rows], dtype=POINT_DTYPE)


def swipe(t0, x0, y0, dx, dy, n=6, dt=16, pressure=0.5, area=0.2):
    rows = []
    for i in range(n):
        a = Action.FINGER_DOWN if i == 0 else Action.FINGER_UP if i == n - 1 else Action.MOVE
        f = i / (n - 1)
        rows.append((t0 + i * dt, round(x0 + f * dx), round(y0 + f * dy), pressure, area, a))
    return rows


def session(sid, ordinal, rows, device=IPHONE7, task=Task.GALLERY):
    return SessionRecord(sid, ordinal, task, device, make_points(rows))


@pytest.fixture(scope="session")
def small_synth() -> Dataset:
    return generate(SynthConfig(n_users=12, sessions_per_user=3, strokes_per_session=20, seed=5))


@pytest.fixture(scope="session")
def small_store(small_synth):
    return build_store(small_synth)


@pytest.fixture(scope="session")
def multi_device_synth() -> Dataset:
    return generate(SynthConfig(n_users=18, sessions_per_user=3, strokes_per_session=20,
                                devices=("iPhone 7", "iPhone X", "OnePlus 5"),
                                device_offset=0.8, sigma_session=0.4, seed=11))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(n, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
