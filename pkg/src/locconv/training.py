"""Optimizer, loss, normalization, metrics, windowing and chronological splits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import ops
from .data import FrameDataset
from .tensor import Tape, Tensor, backward


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


# --- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def _named(params) -> list:
    if isinstance(params, dict):
        return list(params.items())
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def adam_step(params, state: AdamState, grads=None) -> AdamState:
    """One bias-corrected Adam update, in place.

    ``params`` is a list or ``{name: Tensor}``; gradients are read from
    ``.grad`` unless ``grads`` (same order / keys) is given.
    """
    named = _named(params)
    if grads is None:
        gs = [p.grad for _, p in named]
    elif isinstance(grads, dict):
        gs = [grads[k] for k, _ in named]
    else:
        gs = list(grads)
    for (name, p), g in zip(named, gs):
        if g is None:
            raise ValueError(f"no gradient for parameter {name!r}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1 ** state.t, 1 - b2 ** state.t
    for (name, p), g in zip(named, gs):
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# --- loss ---------------------------------------------------------------------

def _expand_mask(mask, shape: tuple) -> np.ndarray:
    """Broadcast a cell mask onto ``shape``; a [W,H] mask on [B,W,H,C] covers every channel."""
    if mask is None:
        return np.ones(shape)
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 2 and len(shape) == 4:
        m = m[None, :, :, None]
    return np.broadcast_to(m, shape)


def mse_loss(pred: Tensor, target, mask=None) -> Tensor:
    """Masked mean squared error.

    With a ``[W, H]`` mask on ``[B, W, H, C]`` predictions the squared error is
    averaged over batch and cells and summed over the ``C`` output heads.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if tuple(t.shape) != tuple(pred.shape):
        raise ValueError(f"prediction {pred.shape} and target {t.shape} differ")
    m = _expand_mask(mask, pred.shape)
    count = m.sum()
    if len(pred.shape) == 4 and mask is not None and np.ndim(mask) == 2:
        count /= pred.shape[-1]
    if count == 0:
        raise ValueError("mask selects no cells")
    d = ops.sub(pred, t)
    return ops.mul(ops.sum(ops.mul(ops.mul(d, d), m)), 1.0 / count)


# --- normalization and metrics ------------------------------------------------

@dataclass(frozen=True)
class MinMaxScaler:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"degenerate scaler range [{self.lo}, {self.hi}]")

    @classmethod
    def fit(cls, values: np.ndarray, mask=None) -> "MinMaxScaler":
        v = np.asarray(values, dtype=np.float64)
        if mask is not None:
            v = v[..., np.asarray(mask) > 0]
        return cls(float(v.min()), float(v.max()))

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def inverse(self, y):
        return np.asarray(y, dtype=np.float64) * (self.hi - self.lo) + self.lo


IDENTITY = None  # metrics() with scaler=None compares values as given


def metrics(pred, target, mask=None, scaler: Optional[MinMaxScaler] = IDENTITY) -> tuple[float, float]:
    """(RMSE, MAE) after de-normalizing both sides, over unmasked cells only."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction {p.shape} and target {t.shape} differ")
    if scaler is not None:
        p, t = scaler.inverse(p), scaler.inverse(t)
    m = _expand_mask(mask, p.shape) > 0
    if not m.any():
        raise ValueError("mask selects no cells")
    d = (p - t)[m]
    return math.sqrt(float(np.mean(d * d))), float(np.mean(np.abs(d)))


def horizon_metrics(pred, target, mask=None, scaler=IDENTITY) -> list:
    """Per-output-channel (RMSE, MAE) for ``[N, W, H, C]`` arrays."""
    return [metrics(pred[..., c], target[..., c], mask, scaler) for c in range(pred.shape[-1])]


# --- windows and splits -------------------------------------------------------

def make_windows(ds: FrameDataset, l: int, h: Union[int, Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """All ``(X_{t-l+1..t}, X_{t+h})`` pairs, oldest frame first.

    Returns inputs ``[N, W, H, l]`` and targets ``[N, W, H, len(h)]``; each
    sequence contributes ``T - l - max(h) + 1`` windows.
    """
    horizons = [h] if np.isscalar(h) else list(h)
    if l < 1 or not horizons or min(horizons) < 1:
        raise ValueError(f"need l >= 1 and horizons >= 1, got l={l}, h={horizons}")
    T, reach = ds.length, max(horizons)
    if T < l + reach:
        raise ValueError(f"sequence of length {T} is too short for l={l}, h={reach}")
    n = T - l - reach + 1
    frames = np.moveaxis(ds.frames, 1, -1)                          # [S, W, H, T]
    xs = np.stack([frames[..., t:t + l] for t in range(n)], axis=1)  # [S, n, W, H, l]
    ys = np.stack([np.stack([frames[..., t + l - 1 + k] for k in horizons], axis=-1)
                   for t in range(n)], axis=1)
    W, H = ds.grid
    return xs.reshape(-1, W, H, l), ys.reshape(-1, W, H, len(horizons))


@dataclass
class Split:
    train: FrameDataset
    valid: FrameDataset
    test: FrameDataset
    scaler: MinMaxScaler


def split(ds: FrameDataset, scheme: Sequence[float] = (0.6, 0.2, 0.2)) -> Split:
    """Contiguous chronological split; the scaler sees training frames only.

    ``scheme`` holds three fractions summing to one, or three integer frame
    counts whose sum must not exceed the series length.
    """
    T = ds.length
    if len(scheme) != 3:
        raise ValueError(f"split needs three parts, got {scheme}")
    if all(isinstance(s, (int, np.integer)) for s in scheme):
        n_train, n_valid, n_test = (int(s) for s in scheme)
        if min(n_train, n_valid, n_test) < 0 or n_train + n_valid + n_test > T:
            raise ValueError(f"frame counts {scheme} exceed the {T} available frames")
    else:
        if abs(sum(scheme) - 1.0) > 1e-9 or min(scheme) < 0:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {scheme}")
        n_train = int(math.floor(scheme[0] * T + 1e-9))
        n_valid = int(math.floor(scheme[1] * T + 1e-9))
        n_test = T - n_train - n_valid
    cuts = (0, n_train, n_train + n_valid, n_train + n_valid + n_test)
    parts = [ds.with_frames(ds.frames[:, a:b], tag=f"{ds.tag}:{name}")
             for (a, b), name in zip(zip(cuts, cuts[1:]), ("train", "valid", "test"))]
    scaler = MinMaxScaler.fit(parts[0].frames, ds.mask)
    return Split(parts[0], parts[1], parts[2], scaler)


# --- one optimization step ----------------------------------------------------

def train_step(model, x: np.ndarray, y: np.ndarray, mask, state: AdamState) -> float:
    params = model.params
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = mse_loss(model(Tensor(x)), y, mask)
    value = float(loss.data)
    if not math.isfinite(value):
        raise DivergenceError(f"{model.name}: loss became {value}")
    backward(tape, loss)
    adam_step(params, state)
    return value
