"""Differentiable tensor operations (everything except convolution).

Spatial tensors are channels-last: ``[B, W, H, C]``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from .tensor import ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", (a, b), a.data + b.data, back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result("sub", (a, b), a.data - b.data, back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "multiply")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result("multiply", (a, b), a.data * b.data, back)


multiply = mul


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return make_result("sum", (x,), np.sum(x.data, axis=axis), back)


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def back(g):
        return (np.full(x.shape, g / n),)

    return make_result("mean", (x,), np.mean(x.data), back)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def back(g):
        return (g.reshape(x.shape),)

    return make_result("reshape", (x,), out, back)


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def back(g):
        return (np.transpose(g, inverse),)

    return make_result("transpose", (x,), np.transpose(x.data, axes), back)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: {x.shape} -> {shape}") from None

    def back(g):
        return (_unbroadcast(g, x.shape),)

    return make_result("broadcast_to", (x,), out, back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            shapes = [t.shape for t in tensors]
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return make_result("concat", tensors, np.concatenate([t.data for t in tensors], axis=ax), back)


def take(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    x = as_tensor(x)
    ax = axis % x.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeError(f"take [{start}, {stop}) out of range for axis of length {x.shape[ax]}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def back(g):
        full = np.zeros(x.shape)
        full[index] = g
        return (full,)

    return make_result("take", (x,), x.data[index], back)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list:
    ax = axis % x.ndim
    if np.sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to {x.shape[ax]}")
    out, start = [], 0
    for n in sizes:
        out.append(take(x, start, start + n, ax))
        start += n
    return out


def identity(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return make_result("identity", (x,), x.data.copy(), lambda g: (g,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)

    def back(g):
        return (g * y * (1.0 - y),)

    return make_result("sigmoid", (x,), y, back)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0

    def back(g):
        return (g * positive,)

    return make_result("relu", (x,), np.where(positive, x.data, 0.0), back)


ACTIVATIONS = {"linear": identity, "identity": identity, "relu": relu, "sigmoid": sigmoid}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def _pool_windows(x: Tensor, pw: int, ph: int, op: str) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected [B, W, H, C], got {x.shape}")
    B, W, H, C = x.shape
    if pw < 1 or ph < 1 or W % pw or H % ph:
        raise ShapeError(f"{op}: pool {pw}x{ph} does not divide spatial dims {W}x{H}")
    win = x.data.reshape(B, W // pw, pw, H // ph, ph, C).transpose(0, 1, 3, 5, 2, 4)
    return win.reshape(B, W // pw, H // ph, C, pw * ph)


def max_pool(x: Tensor, pw: int = 2, ph: int = 2) -> Tensor:
    """Max pooling; ties send the gradient to the first maximum in row-major order."""
    x = as_tensor(x)
    win = _pool_windows(x, pw, ph, "max_pool")
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    B, W, H, C = x.shape

    def back(g):
        gw = np.zeros(win.shape)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gw = gw.reshape(B, W // pw, H // ph, C, pw, ph).transpose(0, 1, 4, 2, 5, 3)
        return (gw.reshape(x.shape),)

    return make_result("max_pool", (x,), out, back)


def avg_pool(x: Tensor, pw: int = 2, ph: int = 2) -> Tensor:
    x = as_tensor(x)
    win = _pool_windows(x, pw, ph, "avg_pool")
    out = win.mean(axis=-1)
    B, W, H, C = x.shape

    def back(g):
        gw = np.repeat(np.repeat(g / (pw * ph), pw, axis=1), ph, axis=2)
        return (gw.reshape(x.shape),)

    return make_result("avg_pool", (x,), out, back)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense layer ``x @ weight + bias`` for ``x`` of shape ``[B, in]``."""
    x = as_tensor(x)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"fully_connected: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"fully_connected: bias {bias.shape} vs {weight.shape[1]} units")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def back(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("fully_connected", inputs, out, back)
