"""Central finite-difference gradient checks.

The error of one check is the norm-wise relative error
``|a - n| / max(|a|, |n|, 1e-12)`` between the analytic gradient ``a`` and
the numeric gradient ``n``, concatenated over every differentiable operand.
The scalar probed is ``sum(out * R)`` for a fixed random ``R``, so every
output element contributes.
"""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import blocks, ops
from .conv import conv2d
from .tensor import Tape, Tensor, backward

STEP = 1e-4
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[..., Tensor], inputs: list, rng: np.random.Generator,
                    step: float = STEP) -> float:
    """Compare tape gradients of ``fn(*inputs)`` with central differences."""
    probe = rng.normal(size=fn(*inputs).shape)
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = ops.sum(ops.mul(fn(*inputs), probe))
    backward(tape, loss)

    analytic, numeric = [], []
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic.append((t.grad if t.grad is not None else np.zeros(t.shape)).ravel())
        num = np.empty(t.size)
        flat = t.data.reshape(-1)
        for i in range(t.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(np.sum(fn(*inputs).data * probe))
            flat[i] = orig - step
            down = float(np.sum(fn(*inputs).data * probe))
            flat[i] = orig
            num[i] = (up - down) / (2 * step)
        numeric.append(num)
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def _p(rng, *shape, low=None):
    data = rng.normal(size=shape)
    if low is not None:
        # keep values away from kinks so a finite step never crosses one
        data = np.sign(data) * (np.abs(data) + low)
    return Tensor(data, requires_grad=True)


def _distinct(rng, *shape):
    # well-separated values so max-pool argmaxes are stable under the step
    n = int(np.prod(shape))
    return Tensor(rng.permutation(n).reshape(shape) * 0.01 + rng.normal(size=shape) * 1e-4,
                  requires_grad=True)


def _two_layer_net(rng):
    x = _p(rng, 2, 5, 4, 2)
    k1, b1 = _p(rng, 3, 3, 2, 3), _p(rng, 3)
    k2, b2 = _p(rng, 2, 2, 3, 2), _p(rng, 2)

    def net(x, k1, b1, k2, b2):
        return conv2d(ops.sigmoid(conv2d(x, k1, b1)), k2, b2)

    return net, [x, k1, b1, k2, b2]


def _persistent(rng):
    x = _p(rng, 2, 4, 4, 2)
    li = _p(rng, 4, 4, 1)
    lw = _p(rng, 4, 4, 2, 1)
    k1, k2 = _p(rng, 3, 3, 4, 2), _p(rng, 2, 2, 4, 2)

    def fn(x, li, lw, k1, k2):
        p = ops.concat([ops.broadcast_to(li, (x.shape[0],) + li.shape),
                        blocks.lw_apply_1x1(x, lw)], axis=-1)
        layers = [lambda h: ops.sigmoid(conv2d(h, k1)), lambda h: conv2d(h, k2)]
        return blocks.persistent_wrap(layers, p)(x)

    return fn, [x, li, lw, k1, k2]


def _combined(include_input):
    def make(rng):
        x = _p(rng, 2, 3, 4, 2)
        li = blocks.LearnableInputMap(3, 4, 2, rng)
        bank = blocks.LocalWeightBank("1x1", 3, 4, 2, d=2, rng=rng)

        def fn(x, maps, weights):
            return blocks.combined_block(x, li, bank, include_input)

        return fn, [x, li.maps, bank.weights]

    return make


def _mse(rng):
    from .training import mse_loss

    target = Tensor(rng.normal(size=(3, 4, 4, 2)))
    mask = (rng.random((4, 4)) < 0.7).astype(float)
    mask[0, 0] = 1.0
    pred = _p(rng, 3, 4, 4, 2)
    return (lambda p: mse_loss(p, target, mask)), [pred]


SUITE: dict[str, Callable] = {
    "add": lambda r: (ops.add, [_p(r, 3, 4), _p(r, 4)]),
    "multiply": lambda r: (ops.mul, [_p(r, 2, 3, 2), _p(r, 3, 1)]),
    "sub": lambda r: (ops.sub, [_p(r, 5), _p(r, 5)]),
    "sum": lambda r: (lambda x: ops.sum(x, axis=1), [_p(r, 3, 4)]),
    "mean": lambda r: (ops.mean, [_p(r, 2, 3)]),
    "concat": lambda r: (lambda a, b: ops.concat([a, b], axis=-1), [_p(r, 2, 3, 1), _p(r, 2, 3, 2)]),
    "split": lambda r: (lambda x: ops.mul(ops.split(x, [1, 2], axis=1)[1], 2.0), [_p(r, 2, 3)]),
    "reshape": lambda r: (lambda x: ops.reshape(x, (3, 4)), [_p(r, 2, 6)]),
    "transpose": lambda r: (lambda x: ops.transpose(x, (2, 0, 1)), [_p(r, 2, 3, 4)]),
    "flatten": lambda r: (ops.flatten, [_p(r, 2, 3, 2, 2)]),
    "broadcast_to": lambda r: (lambda x: ops.broadcast_to(x, (3, 2, 2)), [_p(r, 2, 2)]),
    "identity": lambda r: (ops.identity, [_p(r, 4)]),
    "sigmoid": lambda r: (ops.sigmoid, [_p(r, 3, 3)]),
    "relu": lambda r: (ops.relu, [_p(r, 3, 3, low=0.01)]),
    "max_pool": lambda r: (lambda x: ops.max_pool(x, 2, 2), [_distinct(r, 2, 4, 6, 2)]),
    "avg_pool": lambda r: (lambda x: ops.avg_pool(x, 2, 3), [_p(r, 2, 4, 6, 2)]),
    "fully_connected": lambda r: (ops.fully_connected, [_p(r, 3, 4), _p(r, 4, 2), _p(r, 2)]),
    "conv2d": lambda r: (lambda x, k, b: conv2d(x, k, b, method="direct"),
                         [_p(r, 2, 4, 5, 2), _p(r, 3, 3, 2, 2), _p(r, 2)]),
    "conv2d_even": lambda r: (lambda x, k, b: conv2d(x, k, b, method="direct"),
                              [_p(r, 1, 5, 4, 2), _p(r, 4, 2, 2, 3), _p(r, 3)]),
    "conv2d_fft": lambda r: (lambda x, k, b: conv2d(x, k, b, method="fft"),
                             [_p(r, 2, 5, 4, 2), _p(r, 4, 3, 2, 2), _p(r, 2)]),
    "conv_net_2layer": _two_layer_net,
    "li_concat": lambda r: (lambda x, li: blocks.li_concat(x, li), [_p(r, 2, 3, 3, 2), _p(r, 3, 3, 2)]),
    "lw_1x1": lambda r: (blocks.lw_apply_1x1, [_p(r, 2, 3, 3, 2), _p(r, 3, 3, 2, 2)]),
    "lw_AxB": lambda r: (blocks.lw_apply_AxB, [_p(r, 2, 4, 3, 2), _p(r, 4, 3, 2, 2, 3, 2)]),
    "lw_elementwise": lambda r: (blocks.lw_apply_elementwise, [_p(r, 2, 3, 3, 2), _p(r, 3, 3, 2)]),
    "combined_block": _combined(True),
    "combined_block_minus_input": _combined(False),
    "persistent_wrap": _persistent,
    "locally_connected": lambda r: (blocks.locally_connected,
                                    [_p(r, 2, 3, 4, 2), _p(r, 3, 4, 3, 2, 2, 2), _p(r, 3, 4, 2)]),
    "mse_loss": _mse,
}


def run_suite(n_instances: int = 20, seed: int = 0, names=None) -> dict:
    """Return ``{op: (max relative error, seconds)}`` over ``n_instances`` draws each."""
    rng = np.random.default_rng(seed)
    results = {}
    for name, factory in SUITE.items():
        if names is not None and name not in names:
            continue
        start = time.perf_counter()
        worst = 0.0
        for _ in range(n_instances):
            fn, inputs = factory(rng)
            worst = max(worst, check_gradients(fn, inputs, rng))
        results[name] = (worst, time.perf_counter() - start)
    return results
