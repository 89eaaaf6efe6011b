import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from locconv import ops
from locconv.conv import conv2d
from locconv.gradcheck import STEP, TOLERANCE, check_gradients
from locconv.tensor import ShapeError, Tape, Tensor, backward


def naive_conv(x, k, b):
    """Triple loop over output pixels with zero padding, window offsets from -(k//2)."""
    W, H, n = x.shape
    k1, k2, _, m = k.shape
    out = np.zeros((W, H, m))
    for i in range(W):
        for j in range(H):
            for o in range(m):
                s = b[o]
                for a in range(k1):
                    for c in range(k2):
                        p, q = i + a - k1 // 2, j + c - k2 // 2
                        if 0 <= p < W and 0 <= q < H:
                            s += np.dot(x[p, q, :], k[a, c, :, o])
                out[i, j, o] = s
    return out


def grads_of(loss_fn, *tensors):
    with Tape() as tape:
        loss = loss_fn(*tensors)
    backward(tape, loss)
    return [t.grad for t in tensors]


def test_sum_gradient_is_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (g,) = grads_of(ops.sum, x)
    assert np.array_equal(g, [1, 1, 1])


def test_square_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (g,) = grads_of(lambda t: ops.sum(ops.mul(t, t)), x)
    assert np.array_equal(g, [2, 4, 6])


def test_fan_out_accumulates():
    x = Tensor([1.0, -2.0], requires_grad=True)
    (g,) = grads_of(lambda t: ops.sum(ops.add(ops.mul(t, 3.0), t)), x)
    assert np.array_equal(g, [4, 4])


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, 2.0)
    with pytest.raises(ValueError):
        backward(tape, y)


def test_tape_records_in_order_and_registers_parameters():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, 2.0)
        z = ops.sum(y)
    assert [n.output for n in tape.nodes] == [y, z]
    assert x in tape.parameters


def test_no_recording_without_tape():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        pass
    ops.sum(x)
    assert tape.nodes == []


def test_activations_and_pooling_values():
    assert ops.sigmoid(Tensor([0.0])).data[0] == 0.5
    assert np.array_equal(ops.relu(Tensor([-3.0, 3.0])).data, [0.0, 3.0])
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1), requires_grad=True)
    (g,) = grads_of(lambda t: ops.sum(ops.max_pool(t, 2, 2)), x)
    assert ops.max_pool(x, 2, 2).data.item() == 4.0
    assert np.array_equal(g.reshape(2, 2), [[0, 0], [0, 1]])


def test_max_pool_tie_goes_to_first_row_major_index():
    x = Tensor(np.full((1, 2, 2, 1), 5.0), requires_grad=True)
    (g,) = grads_of(lambda t: ops.sum(ops.max_pool(t, 2, 2)), x)
    assert np.array_equal(g.reshape(2, 2), [[1, 0], [0, 0]])


def test_pool_requires_divisibility():
    with pytest.raises(ShapeError):
        ops.max_pool(Tensor(np.zeros((1, 3, 4, 1))), 2, 2)


def test_shape_errors_are_descriptive():
    with pytest.raises(ShapeError, match="channel"):
        conv2d(Tensor(np.zeros((1, 3, 3, 2))), Tensor(np.zeros((3, 3, 1, 1))))
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 0, 3, 1))), Tensor(np.zeros((1, 1, 1, 1))))


def test_conv_examples():
    x = np.arange(1.0, 10.0).reshape(3, 3, 1)
    y = conv2d(Tensor(x), Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor([0.0]))
    assert np.array_equal(y.data, 2 * x)
    rng = np.random.default_rng(0)
    y = conv2d(Tensor(rng.normal(size=(5, 4, 3))), Tensor(np.zeros((3, 3, 3, 2))), Tensor([1.5, -2.0]))
    assert np.all(y.data[..., 0] == 1.5) and np.all(y.data[..., 1] == -2.0)


def test_identity_kernel_is_bit_exact():
    x = np.random.default_rng(1).normal(size=(2, 6, 5, 1))
    y = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
    assert np.array_equal(y.data, x)


@pytest.mark.parametrize("shape,kernel,method", [
    ((4, 4, 1), (3, 3, 1, 1), "direct"),
    ((5, 6, 2), (4, 4, 2, 3), "direct"),
    ((5, 6, 2), (4, 2, 2, 3), "fft"),
    ((7, 5, 3), (7, 7, 3, 2), "auto"),
    ((6, 6, 2), (6, 6, 2, 2), "fft"),
])
def test_conv_matches_naive_oracle(shape, kernel, method):
    rng = np.random.default_rng(2)
    x, k, b = rng.normal(size=shape), rng.normal(size=kernel), rng.normal(size=kernel[-1])
    y = conv2d(Tensor(x), Tensor(k), Tensor(b), method=method)
    assert np.max(np.abs(y.data - naive_conv(x, k, b))) < 1e-12


def test_two_layer_conv_net_gradients():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 5, 5, 2)), requires_grad=True)
    k1 = Tensor(rng.normal(size=(3, 3, 2, 3)), requires_grad=True)
    k2 = Tensor(rng.normal(size=(2, 2, 3, 1)), requires_grad=True)

    def net(x, k1, k2):
        return conv2d(ops.sigmoid(conv2d(x, k1)), k2)

    assert check_gradients(net, [x, k1, k2], rng, STEP) < TOLERANCE


def test_conv_translation_equivariant_on_interior():
    rng = np.random.default_rng(4)
    x = np.zeros((1, 10, 10, 1))
    x[0, 4:6, 4:6, 0] = rng.normal(size=(2, 2))
    k = Tensor(rng.normal(size=(3, 3, 1, 1)))
    y0 = conv2d(Tensor(x), k).data
    y1 = conv2d(Tensor(np.roll(x, 1, axis=1)), k).data
    assert np.allclose(np.roll(y0, 1, axis=1)[:, 2:9, 2:9], y1[:, 2:9, 2:9], atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3, 4), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (2, 3, 2), elements=st.floats(-1e3, 1e3)))
def test_concat_then_split_round_trips(a, b):
    c = ops.concat([Tensor(a), Tensor(b)], axis=-1)
    left, right = ops.split(c, [4, 2], axis=-1)
    assert np.array_equal(left.data, a) and np.array_equal(right.data, b)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.integers(2, 6), st.integers(1, 3),
       st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_conv_forward_deterministic_and_finite(B, W, H, n, k1, k2, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(B, W, H, n)))
    k = Tensor(rng.normal(size=(k1, k2, n, 2)))
    y1, y2 = conv2d(x, k), conv2d(x, k)
    assert y1.shape == (B, W, H, 2)
    assert np.array_equal(y1.data, y2.data) and np.all(np.isfinite(y1.data))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_elementwise_gradients_property(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    fn = lambda a, b: ops.sigmoid(ops.add(ops.mul(a, b), a))  # noqa: E731
    assert check_gradients(fn, [a, b], rng) < TOLERANCE
