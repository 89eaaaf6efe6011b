"""Same-padded 2D convolution (cross-correlation) over channels-last tensors.

Output position ``(i, j)`` of a ``k1 x k2`` kernel reads input rows
``i - k1 // 2 .. i - k1 // 2 + k1 - 1`` (and likewise for columns), with zeros
outside the grid. For odd kernels that is the centred window; for even
kernels the extra tap sits after the centre.

Small kernels are evaluated tap by tap with matrix products. Large kernels
(the 20x20 and 10x10 filters of the bouncing-ball nets) go through real FFTs,
which are exact up to rounding.
"""
from __future__ import annotations

import numpy as np
from scipy import fft as sfft

from .tensor import ShapeError, Tensor, as_tensor, make_result

DIRECT_MAX_TAPS = 36


def _check(x: Tensor, kernels: Tensor, bias: Tensor | None) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be [W, H, n] or [B, W, H, n], got {x.shape}")
    if x.size == 0:
        raise ShapeError(f"conv2d: zero-sized input {x.shape}")
    if kernels.ndim != 4:
        raise ShapeError(f"conv2d: kernels must be [k1, k2, n, m], got {kernels.shape}")
    k1, k2, n, m = kernels.shape
    if k1 < 1 or k2 < 1 or m < 1:
        raise ShapeError(f"conv2d: degenerate kernel shape {kernels.shape}")
    if n != x.shape[3]:
        raise ShapeError(f"conv2d: kernel expects {n} input channels, input has {x.shape[3]}")
    if bias is not None and bias.shape != (m,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({m},)")


def _pads(k: int) -> tuple[int, int]:
    before = k // 2
    return before, k - 1 - before


def _direct_forward(x, k):
    B, W, H, _ = x.shape
    k1, k2, _, m = k.shape
    xp = np.pad(x, ((0, 0), _pads(k1), _pads(k2), (0, 0)))
    y = np.zeros((B, W, H, m))
    for a in range(k1):
        for c in range(k2):
            y += xp[:, a:a + W, c:c + H, :] @ k[a, c]
    return y, xp


def _direct_backward(g, xp, k, want_x):
    B, W, H, _ = g.shape
    k1, k2, n, m = k.shape
    dk = np.empty_like(k)
    gm = g.reshape(-1, m)
    dxp = np.zeros(xp.shape) if want_x else None
    for a in range(k1):
        for c in range(k2):
            win = xp[:, a:a + W, c:c + H, :]
            dk[a, c] = win.reshape(-1, n).T @ gm
            if want_x:
                dxp[:, a:a + W, c:c + H, :] += g @ k[a, c].T
    dx = None
    if want_x:
        p1, p2 = k1 // 2, k2 // 2
        dx = dxp[:, p1:p1 + W, p2:p2 + H, :]
    return dx, dk


def _fft_plan(W, H, k1, k2):
    n1 = sfft.next_fast_len(W + k1 - 1, real=True)
    n2 = sfft.next_fast_len(H + k2 - 1, real=True)
    rows = (k1 // 2 - np.arange(k1)) % n1
    cols = (k2 // 2 - np.arange(k2)) % n2
    return n1, n2, rows, cols


def _fft_forward(x, k):
    B, W, H, _ = x.shape
    k1, k2, n, m = k.shape
    n1, n2, rows, cols = _fft_plan(W, H, k1, k2)
    # circular filter g[t] = k[p - t], so the correlation becomes a convolution
    g = np.zeros((n1, n2, n, m))
    g[rows[:, None], cols[None, :]] = k
    gf = sfft.rfft2(g, axes=(0, 1))
    xf = sfft.rfft2(x, s=(n1, n2), axes=(1, 2))
    yf = np.matmul(xf.transpose(1, 2, 0, 3), gf).transpose(2, 0, 1, 3)
    y = sfft.irfft2(yf, s=(n1, n2), axes=(1, 2))[:, :W, :H, :]
    return y, (xf, gf)


def _fft_backward(g, cache, shape, k_shape, want_x):
    xf, gf = cache
    B, W, H, _ = shape
    k1, k2, n, m = k_shape
    n1, n2, rows, cols = _fft_plan(W, H, k1, k2)
    gyf = sfft.rfft2(g, s=(n1, n2), axes=(1, 2)).transpose(1, 2, 0, 3)
    dgf = np.matmul(np.conj(xf.transpose(1, 2, 3, 0)), gyf)
    dg = sfft.irfft2(dgf, s=(n1, n2), axes=(0, 1))
    dk = dg[rows[:, None], cols[None, :]]
    dx = None
    if want_x:
        dxf = np.matmul(gyf, np.conj(gf.transpose(0, 1, 3, 2))).transpose(2, 0, 1, 3)
        dx = sfft.irfft2(dxf, s=(n1, n2), axes=(1, 2))[:, :W, :H, :]
    return dx, dk


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, method: str = "auto") -> Tensor:
    """Same-padded 2D convolution.

    ``x`` is ``[W, H, n]`` or batched ``[B, W, H, n]``; ``kernels`` is
    ``[k1, k2, n, m]``; ``bias`` is ``[m]``. Returns ``[(B,) W, H, m]``.
    ``method`` is ``"direct"``, ``"fft"`` or ``"auto"`` (direct for kernels
    with at most ``DIRECT_MAX_TAPS`` taps).
    """
    from .ops import reshape

    x = as_tensor(x)
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), kernels, bias, method)
        return reshape(out, out.shape[1:])
    _check(x, kernels, bias)
    k1, k2, n, m = kernels.shape
    if method == "auto":
        method = "direct" if k1 * k2 <= DIRECT_MAX_TAPS else "fft"
    if method == "direct":
        y, cache = _direct_forward(x.data, kernels.data)
    elif method == "fft":
        y, cache = _fft_forward(x.data, kernels.data)
    else:
        raise ValueError(f"unknown conv2d method {method!r}")
    if bias is not None:
        y = y + bias.data

    def back(g):
        if method == "direct":
            dx, dk = _direct_backward(g, cache, kernels.data, x.requires_grad)
        else:
            dx, dk = _fft_backward(g, cache, x.shape, kernels.shape, x.requires_grad)
        grads = [dx, dk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return make_result("conv2d", inputs, y, back)
