"""Synthetic benchmarks: bouncing balls and a localized wind-like grid process.

A :class:`FrameDataset` stores one or more frame sequences as
``[S, T, W, H]`` plus a ``W x H`` validity mask. Windows are always cut
within a single sequence.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .ltf import load_ltf, save_ltf

GENERATOR_VERSION = "1"

BALL_RADIUS = 7.2
BALL_FRAME = 30
BALL_INPUT_FRAMES = 25
BALL_OFFSET = 5
SPEED_RANGE = (1.0, 2.0)


@dataclass
class FrameDataset:
    frames: np.ndarray                  # [S, T, W, H]
    mask: np.ndarray                    # [W, H] of {0, 1}
    window_len: int = 1
    horizon: int = 1
    tag: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim == 3:
            self.frames = self.frames[None]
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be [S, T, W, H], got {self.frames.shape}")
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.shape != self.frames.shape[2:]:
            raise ValueError(f"mask {self.mask.shape} does not match grid {self.frames.shape[2:]}")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask must contain only 0 and 1")

    @property
    def grid(self) -> tuple:
        return self.frames.shape[2:]

    @property
    def n_sequences(self) -> int:
        return self.frames.shape[0]

    @property
    def length(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames, tag=None) -> "FrameDataset":
        return replace(self, frames=frames, tag=self.tag if tag is None else tag, meta=dict(self.meta))


# --- bouncing balls ---------------------------------------------------------

@dataclass(frozen=True)
class BallState:
    position: tuple
    velocity: tuple
    radius: float = BALL_RADIUS

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


def _reflect(p: float, v: float, lo: float, hi: float) -> tuple[float, float, bool]:
    bounced = False
    # a step is shorter than the free span, so at most one wall per axis is hit
    if p < lo:
        p, v, bounced = lo + (lo - p), -v, True
    elif p > hi:
        p, v, bounced = hi - (p - hi), -v, True
    return p, v, bounced


def step_ball_flagged(state: BallState, frame_size: float = BALL_FRAME) -> tuple[BallState, bool]:
    r = state.radius
    if r >= frame_size / 2:
        raise ValueError(f"radius {r} does not fit a frame of size {frame_size}")
    lo, hi = r, frame_size - r
    x, vx, bx = _reflect(state.position[0] + state.velocity[0], state.velocity[0], lo, hi)
    y, vy, by = _reflect(state.position[1] + state.velocity[1], state.velocity[1], lo, hi)
    return BallState((x, y), (vx, vy), r), bx or by


def step_ball(state: BallState, frame_size: float = BALL_FRAME) -> BallState:
    """Advance one step, mirroring the position about any wall that was crossed."""
    return step_ball_flagged(state, frame_size)[0]


def render_ball(state: BallState, frame_size: int = BALL_FRAME, smooth: bool = False) -> np.ndarray:
    """Rasterize a white disc; pixel ``(px, py)`` is sampled at its centre ``(px+.5, py+.5)``."""
    centers = np.arange(frame_size) + 0.5
    dx = centers[:, None] - state.position[0]
    dy = centers[None, :] - state.position[1]
    dist = np.hypot(dx, dy)
    if smooth:
        return np.clip(state.radius + 0.5 - dist, 0.0, 1.0)
    return (dist <= state.radius).astype(np.float64)


def random_ball(rng: np.random.Generator, frame_size: float = BALL_FRAME,
                radius: float = BALL_RADIUS) -> BallState:
    pos = tuple(rng.uniform(radius, frame_size - radius, size=2))
    speed = rng.uniform(*SPEED_RANGE)
    angle = rng.uniform(0.0, 2 * np.pi)
    return BallState(pos, (speed * np.cos(angle), speed * np.sin(angle)), radius)


def ball_trajectory(state: BallState, n_steps: int, frame_size: float = BALL_FRAME):
    """States for ``n_steps`` frames plus a flag per transition marking a bounce."""
    states, bounces = [state], []
    for _ in range(n_steps - 1):
        state, hit = step_ball_flagged(state, frame_size)
        states.append(state)
        bounces.append(hit)
    return states, np.array(bounces, dtype=bool)


def _ball_samples(rng, count, seq_len, bounce_only, frame_size, radius, smooth):
    out = np.empty((count, seq_len, frame_size, frame_size))
    initial = np.empty((count, 4))
    filled = 0
    last_input = seq_len - 1 - BALL_OFFSET
    while filled < count:
        start = random_ball(rng, frame_size, radius)
        states, bounces = ball_trajectory(start, seq_len, frame_size)
        # transition t -> t+1 is bounces[t]; keep samples reflecting in (last_input, target]
        if bounce_only and not bounces[last_input:].any():
            continue
        out[filled] = [render_ball(s, frame_size, smooth) for s in states]
        initial[filled] = start.position + start.velocity
        filled += 1
    return out, initial


def generate_ball_dataset(n_train: int = 1600, n_test_all: int = 500, n_test_bounce: int = 500,
                          seed: int = 0, frame_size: int = BALL_FRAME, radius: float = BALL_RADIUS,
                          smooth: bool = False) -> tuple:
    """Train, all-trajectory test and bounce-only test sets.

    Each sample is one sequence of ``25 + 5`` frames: the first 25 are the
    model input and the last is the target five steps after the final input.
    The three sets draw from independent child seeds.
    """
    if min(n_train, n_test_all, n_test_bounce) < 1:
        raise ValueError("all sample counts must be at least 1")
    seq_len = BALL_INPUT_FRAMES + BALL_OFFSET
    streams = np.random.SeedSequence(seed).spawn(3)
    mask = np.ones((frame_size, frame_size))
    sets = []
    for tag, count, ss, bounce in (("train", n_train, streams[0], False),
                                   ("test_all", n_test_all, streams[1], False),
                                   ("test_bounce", n_test_bounce, streams[2], True)):
        frames, initial = _ball_samples(np.random.default_rng(ss), count, seq_len, bounce, frame_size,
                                        radius, smooth)
        # initial (x, y, vx, vy) per sample, so trajectories can be replayed
        meta = {"task": "balls", "count": count, "seed": seed, "radius": radius,
                "generator_version": GENERATOR_VERSION, "smooth": smooth, "initial_state": initial}
        sets.append(FrameDataset(frames, mask, BALL_INPUT_FRAMES, BALL_OFFSET, tag, meta))
    return tuple(sets)


# --- wind-like grid ---------------------------------------------------------

WIND_BASE = 8.0
WIND_FIELD_SCALE = 2.0
WIND_NOISE = 0.3
WIND_DRIFT = 1.5               # cells per step
WIND_OMEGA = (0.3, 0.6)        # rad per step


def generate_windgrid(W: int, H: int, T: int, bias_amplitude: float = 1.0, seed: int = 0,
                      n_waves: int = 6, noise: float = WIND_NOISE) -> FrameDataset:
    """Advected smooth field plus a fixed per-cell bias plus white noise.

    The field is a sum of long plane waves carried across the grid by one
    common drift of ``WIND_DRIFT`` cells per step, so each cell's value moves
    quickly while neighbouring cells stay alike. Each wave's amplitude
    follows a slow AR(1) process around 1. The planted bias map (standard
    normal times ``bias_amplitude``) and the noiseless field are kept in
    ``meta`` for verification.
    """
    if W < 2 or H < 2 or T < 2:
        raise ValueError("windgrid needs W, H, T >= 2")
    rng = np.random.default_rng(seed)
    ii, jj = np.meshgrid(np.arange(W), np.arange(H), indexing="ij")
    t = np.arange(T)

    drift_dir = rng.uniform(0, 2 * np.pi)
    direction = drift_dir + rng.uniform(-np.pi / 8, np.pi / 8, n_waves)
    # frequencies spread over [0.3, 0.6] rad/step keep lag-10 correlation well below lag-1
    lo, hi = WIND_OMEGA
    omega = np.linspace(lo, hi, n_waves) + rng.uniform(-0.02, 0.02, n_waves)
    # pure advection: omega = k . v, so |k| follows from the projection on the drift
    speed = WIND_DRIFT * np.cos(direction - drift_dir)
    kmag = omega / speed
    k = kmag[:, None] * np.stack([np.cos(direction), np.sin(direction)], 1)
    phase = rng.uniform(0, 2 * np.pi, n_waves)

    amp = np.empty((T, n_waves))
    a = np.ones(n_waves)
    for step in range(T):
        a = 1.0 + 0.98 * (a - 1.0) + 0.05 * rng.normal(size=n_waves)
        amp[step] = a

    spatial = k[:, 0, None, None] * ii + k[:, 1, None, None] * jj            # [K, W, H]
    arg = spatial[None] - omega[None, :, None, None] * t[:, None, None, None] + phase[None, :, None, None]
    field_ = WIND_FIELD_SCALE * np.einsum("tk,tkwh->twh", amp, np.cos(arg)) / np.sqrt(n_waves)
    bias = bias_amplitude * rng.normal(size=(W, H))
    frames = WIND_BASE + field_ + bias[None] + noise * rng.normal(size=(T, W, H))

    meta = {"task": "windgrid", "W": W, "H": H, "T": T, "bias_amplitude": bias_amplitude,
            "seed": seed, "noise": noise, "generator_version": GENERATOR_VERSION,
            "bias": bias, "field": WIND_BASE + field_}
    return FrameDataset(frames[None], np.ones((W, H)), tag="windgrid", meta=meta)


# --- persistence ------------------------------------------------------------

def _json_meta(meta: dict) -> dict:
    return {k: v for k, v in meta.items() if not isinstance(v, np.ndarray)}


STORED_ARRAYS = ("bias", "initial_state")


def save_dataset(ds: FrameDataset, directory, stem: str) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_ltf(directory / f"{stem}.ltf", ds.frames)
    save_ltf(directory / f"{stem}_mask.ltf", ds.mask)
    info = {"frames": f"{stem}.ltf", "mask": f"{stem}_mask.ltf", "tag": ds.tag,
            "window_len": ds.window_len, "horizon": ds.horizon,
            "shape": list(ds.frames.shape), **_json_meta(ds.meta)}
    for key in STORED_ARRAYS:
        if key in ds.meta:
            save_ltf(directory / f"{stem}_{key}.ltf", ds.meta[key])
            info[key] = f"{stem}_{key}.ltf"
    return info


def load_dataset(directory, info: dict) -> FrameDataset:
    directory = Path(directory)
    frames = load_ltf(directory / info["frames"])
    mask = load_ltf(directory / info["mask"])
    meta = {k: v for k, v in info.items() if k not in ("frames", "mask", "tag", "window_len", "horizon", "shape")}
    for key in STORED_ARRAYS:
        if key in info:
            meta[key] = load_ltf(directory / info[key])
    return FrameDataset(frames, mask, int(info["window_len"]), int(info["horizon"]), info["tag"], meta)


def write_metadata(directory, entries: dict) -> None:
    Path(directory, "metadata.json").write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")


def read_csv_grid(path, W: int, H: int) -> FrameDataset:
    """One row per time step, ``W*H`` columns in row-major cell order.

    A column whose header starts with ``dummy`` or whose every value is empty
    is a padded cell: it is filled with 0 and masked out.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    if len(header) != W * H:
        raise ValueError(f"{path}: expected {W * H} columns for a {W}x{H} grid, found {len(header)}")
    values = np.zeros((len(body), W * H))
    mask = np.ones(W * H)
    for c, name in enumerate(header):
        column = [row[c].strip() if c < len(row) else "" for row in body]
        if name.strip().lower().startswith("dummy") or all(v == "" for v in column):
            mask[c] = 0.0
            continue
        try:
            values[:, c] = [float(v) for v in column]
        except ValueError as exc:
            raise ValueError(f"{path}: column {name!r}: {exc}") from None
    return FrameDataset(values.reshape(len(body), W, H)[None], mask.reshape(W, H),
                        tag="external", meta={"task": "external-csv", "source": str(path)})


def dataset_summary(ds: Optional[FrameDataset]) -> str:
    if ds is None:
        return "<none>"
    return f"{ds.tag}: {ds.n_sequences} x {ds.length} frames of {ds.grid[0]}x{ds.grid[1]}"
