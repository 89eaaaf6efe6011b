"""Localized layers: learnable inputs, local weights and their combinations.

All spatial tensors are channels-last. Block functions accept an unbatched
``[w, h, n]`` input or a batched ``[B, w, h, n]`` one; learned maps are
shared across the batch.
"""
from __future__ import annotations

from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor, as_tensor, make_result

LI_INIT_RANGE = 0.05


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected [w, h, n] or [B, w, h, n], got {x.shape}")
    return x, False


def _unbatched(y: Tensor, squeeze: bool) -> Tensor:
    return ops.reshape(y, y.shape[1:]) if squeeze else y


class Variant(str, Enum):
    RF_1x1 = "1x1"
    RF_AxB = "AxB"
    ELEMENTWISE = "elementwise"


class LearnableInputMap:
    """``c`` free ``w x h`` maps concatenated to a layer's input."""

    def __init__(self, w: int, h: int, c: int, rng: Optional[np.random.Generator] = None,
                 name: str = "li"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.maps = Tensor(rng.uniform(-LI_INIT_RANGE, LI_INIT_RANGE, size=(w, h, c)),
                           requires_grad=True, name=f"{name}.maps")

    @property
    def n_params(self) -> int:
        return self.maps.size

    def parameters(self) -> list:
        return [self.maps]


class LocalWeightBank:
    """Unshared per-location weights.

    Weight layouts: ``[w, h, n, d]`` for ``RF_1x1``, ``[w, h, n, A, B, d]`` for
    ``RF_AxB`` and ``[w, h, n]`` for ``ELEMENTWISE``.
    """

    def __init__(self, variant, w: int, h: int, n: int, d: int = 1, a: int = 1, b: int = 1,
                 activation: str = "identity", rng: Optional[np.random.Generator] = None,
                 name: str = "lw"):
        self.variant = Variant(variant)
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        if self.variant is Variant.RF_1x1:
            data = glorot_uniform(rng, (w, h, n, d), n, d)
        elif self.variant is Variant.RF_AxB:
            data = glorot_uniform(rng, (w, h, n, a, b, d), n * a * b, d * a * b)
        else:
            # identity start: the block passes its input through at epoch 0
            data = np.ones((w, h, n))
        self.weights = Tensor(data, requires_grad=True, name=f"{name}.weights")

    @property
    def n_params(self) -> int:
        return self.weights.size

    def parameters(self) -> list:
        return [self.weights]

    def __call__(self, x: Tensor) -> Tensor:
        if self.variant is Variant.RF_1x1:
            return lw_apply_1x1(x, self.weights, self.activation)
        if self.variant is Variant.RF_AxB:
            return lw_apply_AxB(x, self.weights, self.activation)
        return lw_apply_elementwise(x, self.weights, self.activation)


class StaticInputMap:
    """Frozen location channels: coordinate ramps or uniform noise."""

    def __init__(self, kind: str, w: int, h: int, c: int = 2,
                 rng: Optional[np.random.Generator] = None):
        self.kind = kind.lower()
        if self.kind == "coords":
            if c != 2:
                raise ValueError("coordinate maps have exactly two channels")
            xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
            ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
            data = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        elif self.kind == "random":
            rng = rng if rng is not None else np.random.default_rng(0)
            data = rng.uniform(-0.5, 0.5, size=(w, h, c))
        else:
            raise ValueError(f"unknown static map kind {kind!r}")
        self.maps = Tensor(data)

    n_params = 0

    def parameters(self) -> list:
        return []


def _maps_for_batch(maps: Tensor, x: Tensor) -> Tensor:
    if maps.shape[:2] != x.shape[1:3]:
        raise ShapeError(f"map spatial dims {maps.shape[:2]} != input spatial dims {x.shape[1:3]}")
    return ops.broadcast_to(maps, (x.shape[0],) + maps.shape)


def li_concat(x: Tensor, li) -> Tensor:
    """Append learnable (or static) maps as extra channels after the input's."""
    maps = li.maps if hasattr(li, "maps") else as_tensor(li)
    xb, squeeze = _batched(x)
    out = ops.concat([xb, _maps_for_batch(maps, xb)], axis=-1)
    return _unbatched(out, squeeze)


def _local_mm(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    # [B, w, h, n] x [w, h, n, d] -> [B, w, h, d], independently per location
    return np.matmul(x[..., None, :], m)[..., 0, :]


def _local_mm_grads(g, x, m, want_x):
    dm = np.matmul(x.transpose(1, 2, 3, 0), g.transpose(1, 2, 0, 3))
    dx = np.matmul(g[..., None, :], m.transpose(0, 1, 3, 2))[..., 0, :] if want_x else None
    return dx, dm


def _local_window(x: Tensor, weights: Tensor, layout: str) -> Tensor:
    """Unshared windowed linear map.

    ``layout="lw"``: weights ``[w, h, n, A, B, d]``; ``layout="lc"``: weights
    ``[w, h, A, B, n, d]``. The ``A x B`` window is anchored like conv2d's.
    """
    B, w, h, n = x.shape
    if layout == "lw":
        if weights.ndim != 6:
            raise ShapeError(f"local weights must be [w, h, n, A, B, d], got {weights.shape}")
        ww, wh, wn, A, Bk, d = weights.shape
        tap = lambda arr, l, m: arr[:, :, :, l, m, :]  # noqa: E731
    else:
        if weights.ndim != 6:
            raise ShapeError(f"locally connected weights must be [w, h, a, b, n, d], got {weights.shape}")
        ww, wh, A, Bk, wn, d = weights.shape
        tap = lambda arr, l, m: arr[:, :, l, m, :, :]  # noqa: E731
    if (ww, wh, wn) != (w, h, n):
        raise ShapeError(f"weights {weights.shape} do not match input {x.shape}")
    if A < 1 or Bk < 1:
        raise ShapeError(f"window must be at least 1x1, got {A}x{Bk}")
    pa, pb = A // 2, Bk // 2
    xp = np.pad(x.data, ((0, 0), (pa, A - 1 - pa), (pb, Bk - 1 - pb), (0, 0)))
    y = np.zeros((B, w, h, d))
    for l in range(A):
        for m in range(Bk):
            win = np.ascontiguousarray(xp[:, l:l + w, m:m + h, :])
            y += _local_mm(win, np.ascontiguousarray(tap(weights.data, l, m)))

    def back(g):
        dw = np.zeros(weights.shape)
        dxp = np.zeros(xp.shape) if x.requires_grad else None
        for l in range(A):
            for m in range(Bk):
                win = np.ascontiguousarray(xp[:, l:l + w, m:m + h, :])
                k = np.ascontiguousarray(tap(weights.data, l, m))
                dx_lm, dk = _local_mm_grads(g, win, k, x.requires_grad)
                tap(dw, l, m)[...] = dk
                if dxp is not None:
                    dxp[:, l:l + w, m:m + h, :] += dx_lm
        dx = dxp[:, pa:pa + w, pb:pb + h, :] if dxp is not None else None
        return dx, dw

    return make_result(f"local_window[{layout}]", (x, weights), y, back)


def lw_apply_1x1(x: Tensor, weights, activation: str = "identity") -> Tensor:
    """``I[i,j,o] = f(sum_k X[i,j,k] M[i,j,k,o])`` with weights ``[w, h, n, d]``."""
    weights = weights.weights if isinstance(weights, LocalWeightBank) else weights
    xb, squeeze = _batched(x)
    if weights.ndim != 4 or weights.shape[:3] != xb.shape[1:]:
        raise ShapeError(f"1x1 local weights {weights.shape} do not match input {xb.shape[1:]}")

    def back(g):
        return _local_mm_grads(g, xb.data, weights.data, xb.requires_grad)

    y = make_result("lw_1x1", (xb, weights), _local_mm(xb.data, weights.data), back)
    return _unbatched(ops.activation(activation)(y), squeeze)


def lw_apply_AxB(x: Tensor, weights, activation: str = "identity") -> Tensor:
    """Windowed local weights ``[w, h, n, A, B, d]`` over a zero-padded A x B window."""
    weights = weights.weights if isinstance(weights, LocalWeightBank) else weights
    xb, squeeze = _batched(x)
    y = _local_window(xb, weights, "lw")
    return _unbatched(ops.activation(activation)(y), squeeze)


def lw_apply_elementwise(x: Tensor, weights, activation: str = "identity") -> Tensor:
    """``I = f(X * M)`` with ``M`` shaped like one input sample."""
    weights = weights.weights if isinstance(weights, LocalWeightBank) else weights
    xb, squeeze = _batched(x)
    if weights.shape != xb.shape[1:]:
        raise ShapeError(f"elementwise weights {weights.shape} != input sample shape {xb.shape[1:]}")
    y = ops.mul(xb, weights)
    return _unbatched(ops.activation(activation)(y), squeeze)


def combined_block(x: Tensor, li: LearnableInputMap, bank: LocalWeightBank,
                   include_input: bool = True) -> Tensor:
    """``[input, LI maps, LW(input)]``, or ``[LI maps, LW(input)]`` without the input."""
    xb, squeeze = _batched(x)
    parts = [xb] if include_input else []
    parts.append(_maps_for_batch(li.maps, xb))
    parts.append(bank(xb))
    return _unbatched(ops.concat(parts, axis=-1), squeeze)


def persistent_wrap(layers: Sequence[Callable[[Tensor], Tensor]],
                    p_block: Optional[Tensor]) -> Callable[[Optional[Tensor]], Tensor]:
    """Re-inject the same feature block ``P`` after every layer.

    The returned fragment maps ``x`` to ``[L_k(...[L_1([x, P]), P]...), P]``.
    With ``x=None`` the first layer sees ``P`` alone. An absent or
    zero-channel ``P`` leaves the layers unwrapped.
    """
    empty = p_block is None or p_block.shape[-1] == 0

    def fragment(x: Optional[Tensor]) -> Tensor:
        if x is None:
            if empty:
                raise ShapeError("persistent fragment needs an input or a non-empty P")
            h = p_block
        else:
            h = x if empty else ops.concat([x, p_block], axis=-1)
        for layer in layers:
            h = layer(h)
            if not empty:
                h = ops.concat([h, p_block], axis=-1)
        return h

    return fragment


def locally_connected(x: Tensor, weights: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Convolution-shaped layer with an independent kernel (and bias) per location.

    ``weights`` is ``[w, h, a, b, n, d]``, ``bias`` is ``[w, h, d]``.
    """
    xb, squeeze = _batched(x)
    y = _local_window(xb, weights, "lc")
    if bias is not None:
        if bias.shape != y.shape[1:]:
            raise ShapeError(f"bias {bias.shape} != output sample shape {y.shape[1:]}")
        y = ops.add(y, bias)
    return _unbatched(y, squeeze)


class LocallyConnected:
    def __init__(self, w: int, h: int, n: int, d: int, a: int = 1, b: int = 1,
                 with_bias: bool = True, rng: Optional[np.random.Generator] = None,
                 name: str = "lc"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = Tensor(glorot_uniform(rng, (w, h, a, b, n, d), a * b * n, a * b * d),
                              requires_grad=True, name=f"{name}.weights")
        self.bias = Tensor(np.zeros((w, h, d)), requires_grad=True, name=f"{name}.bias") if with_bias else None

    @property
    def n_params(self) -> int:
        return self.weights.size + (self.bias.size if self.bias is not None else 0)

    def parameters(self) -> list:
        return [self.weights] + ([self.bias] if self.bias is not None else [])

    def __call__(self, x: Tensor) -> Tensor:
        return locally_connected(x, self.weights, self.bias)
