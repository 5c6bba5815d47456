"""Synthetic touch data with controllable identity, device and session effects.

Each stroke is driven by a vector of kinematic parameters expressed in
standardized latent units::

    z = sigma_between * z_user + sigma_session * z_session
        + device_offset * z_device + sigma_within * z_stroke

with every ``z_*`` standard normal (user and device components drawn once,
session components once per session, stroke components per stroke). The
latent vector is mapped to physical parameters (start point, heading,
length, duration, curvature, velocity easing, pressure, contact area, gap
to the previous stroke) and rendered as a jittered quadratic curve sampled
at ``sampling_rate``. Device effects live in parameter space, so they
survive the resolution normalization of the feature extractor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .dataset import (POINT_DTYPE, Action, Dataset, DeviceSpec, Provenance, SessionRecord,
                      Task, device_map)
from .errors import InvalidConfig
from .preprocess import Direction

# name, base value, latent scale
_PARAMS = (
    ("start_along", 0.0, 0.05),
    ("start_across", 0.0, 0.08),
    ("heading", 0.0, 0.07),
    ("length", 0.0, 0.07),
    ("log_duration", math.log(180.0), 0.22),
    ("curvature", 0.0, 0.06),
    ("log_easing", 0.0, 0.25),
    ("pressure", 0.45, 0.08),
    ("area", 0.20, 0.04),
    ("log_gap", math.log(700.0), 0.30),
)
N_PARAMS = len(_PARAMS)
_BASE = np.array([p[1] for p in _PARAMS])
_SCALE = np.array([p[2] for p in _PARAMS])

# start position (fractions), heading, nominal length (fraction of the travel axis)
_GEOMETRY = {
    Direction.LEFT: ((0.78, 0.50), math.pi, 0.45),
    Direction.RIGHT: ((0.22, 0.50), 0.0, 0.45),
    Direction.UP: ((0.50, 0.72), -math.pi / 2, 0.35),
    Direction.DOWN: ((0.50, 0.28), math.pi / 2, 0.35),
}

EPOCH_MS = 1_546_300_800_000
DAY_MS = 86_400_000
JITTER_PX = 0.6


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 60
    sessions_per_user: int = 6
    strokes_per_session: int = 30
    devices: tuple = ("iPhone 7",)
    device_offset: float = 0.0
    sigma_between: float = 1.0
    sigma_within: float = 0.7
    sigma_session: float = 0.0
    sampling_rate: float = 60.0
    directions: tuple = (("LEFT", 1.0),)
    seed: int = 0
    catalog: tuple = field(default=(), compare=False)

    def validate(self) -> None:
        if self.n_users < 1 or self.sessions_per_user < 1 or self.strokes_per_session < 1:
            raise InvalidConfig("users, sessions and strokes per session must be >= 1")
        for name in ("device_offset", "sigma_between", "sigma_within", "sigma_session"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        if self.sampling_rate <= 0:
            raise InvalidConfig("sampling_rate must be > 0")
        if not self.devices:
            raise InvalidConfig("at least one device is required")
        if not self.directions or any(w < 0 for _, w in self.directions) \
                or sum(w for _, w in self.directions) <= 0:
            raise InvalidConfig("direction weights must be >= 0 with a positive sum")
        known = device_map(self.catalog or None)
        for d in self.devices:
            if d not in known:
                raise InvalidConfig(f"unknown device {d!r}")
        for name, _ in self.directions:
            Direction(name)


def _render(params: np.ndarray, direction: Direction, dev: DeviceSpec, t0: int,
            rate: float, rng: np.random.Generator) -> np.ndarray:
    (sx, sy), heading, nominal = _GEOMETRY[direction]
    horizontal = direction in (Direction.LEFT, Direction.RIGHT)
    W, H = dev.screen_width, dev.screen_height
    along, across, dhead, dlen, logdur, curv, logease, pres, area, _ = params
    if horizontal:
        sx, sy = sx - along * math.cos(heading), sy + across
        travel = W
    else:
        sx, sy = sx + across, sy - along * math.sin(heading)
        travel = H
    sx, sy = min(max(sx, 0.05), 0.95), min(max(sy, 0.05), 0.95)
    L = min(max(nominal + dlen, 0.12), 0.85) * travel
    theta = heading + dhead
    duration = min(max(math.exp(logdur), 60.0), 1500.0)
    n = max(3, 1 + int(round(duration * rate / 1000.0)))

    p0 = np.array([sx * W, sy * H])
    p2 = p0 + L * np.array([math.cos(theta), math.sin(theta)])
    normal = np.array([-math.sin(theta), math.cos(theta)])
    p1 = 0.5 * (p0 + p2) + curv * L * normal
    tau = np.linspace(0.0, 1.0, n)
    s = tau ** math.exp(logease)
    pts = ((1 - s) ** 2)[:, None] * p0 + (2 * s * (1 - s))[:, None] * p1 + (s ** 2)[:, None] * p2
    pts += rng.normal(0.0, JITTER_PX, size=pts.shape)

    out = np.empty(n, dtype=POINT_DTYPE)
    out["t"] = t0 + np.rint(np.arange(n) * (duration / (n - 1))).astype(np.int64)
    out["x"] = np.clip(np.rint(pts[:, 0]), 0, W - 1).astype(np.int32)
    out["y"] = np.clip(np.rint(pts[:, 1]), 0, H - 1).astype(np.int32)
    out["pressure"] = np.clip(pres + rng.normal(0.0, 0.03, n), 0.0, 1.0)
    out["area"] = np.clip(area + rng.normal(0.0, 0.015, n), 0.0, 1.0)
    out["action"] = Action.MOVE
    out["action"][0] = Action.FINGER_DOWN
    out["action"][-1] = Action.FINGER_UP
    return out


def generate(cfg: SynthConfig) -> Dataset:
    """Render a Dataset; the same config always yields the identical Dataset."""
    cfg.validate()
    catalog = device_map(cfg.catalog or None)
    devices = [catalog[name] for name in cfg.devices]
    dev_offsets = [derive_rng(cfg.seed, "device", d.model_name).standard_normal(N_PARAMS)
                   for d in devices]
    dirs = [Direction(name) for name, _ in cfg.directions]
    weights = np.array([w for _, w in cfg.directions], dtype=np.float64)
    weights /= weights.sum()
    vertical = sum(w for d, w in zip(dirs, weights) if d in (Direction.UP, Direction.DOWN))
    task = Task.SOCIAL_FEED if vertical > 0.5 else Task.GALLERY

    users = {}
    width = max(3, len(str(cfg.n_users - 1)))
    for ui in range(cfg.n_users):
        rng = derive_rng(cfg.seed, "user", ui)
        di = ui % len(devices)
        dev = devices[di]
        z_user = rng.standard_normal(N_PARAMS)
        sessions = []
        for si in range(cfg.sessions_per_user):
            z_sess = rng.standard_normal(N_PARAMS)
            t = EPOCH_MS + ui * 7 * DAY_MS // max(cfg.n_users, 1) + si * DAY_MS
            strokes = []
            for _ in range(cfg.strokes_per_session):
                z = (cfg.sigma_between * z_user + cfg.sigma_session * z_sess
                     + cfg.device_offset * dev_offsets[di]
                     + cfg.sigma_within * rng.standard_normal(N_PARAMS))
                params = _BASE + _SCALE * z
                direction = dirs[int(rng.choice(len(dirs), p=weights))] if len(dirs) > 1 else dirs[0]
                t += int(min(max(math.exp(params[-1]), 80.0), 10_000.0))
                pts = _render(params, direction, dev, t, cfg.sampling_rate, rng)
                t = int(pts["t"][-1])
                strokes.append(pts)
            sessions.append(SessionRecord(f"s{si:02d}", si, task, dev, np.concatenate(strokes)))
        users[f"u{ui:0{width}d}"] = tuple(sessions)
    return Dataset(users, Provenance.SYNTHETIC)
