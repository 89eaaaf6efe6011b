import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locconv import data, models, training
from locconv.config import RunConfig
from locconv.experiment import aggregate, prepare, run_experiment, run_job
from locconv.tensor import Tape, Tensor, backward


def hand_adam(w, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float Adam on f(w) = w**2."""
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = 2.0 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(w)
    return out


def test_adam_on_square_matches_hand_recurrence():
    w = Tensor([1.0], requires_grad=True, name="w")
    state = training.AdamState()
    iterates = []
    for _ in range(5):
        training.adam_step([w], state, grads=[2.0 * w.data])
        iterates.append(w.data[0])
    assert np.max(np.abs(np.array(iterates) - hand_adam(1.0, 5))) < 1e-10
    assert state.t == 5 and state.m["w"].shape == w.shape


def test_adam_first_step_and_zero_gradients():
    p = Tensor(np.zeros(4), requires_grad=True)
    training.adam_step([p], training.AdamState(), grads=[np.ones(4)])
    assert np.allclose(p.data, -1e-3 / (1 + 1e-8), rtol=0, atol=1e-15)
    q = Tensor(np.arange(3.0), requires_grad=True)
    state = training.AdamState()
    for _ in range(10):
        training.adam_step([q], state, grads=[np.zeros(3)])
    assert np.array_equal(q.data, np.arange(3.0))


def test_adam_nan_gradient_names_parameter():
    p = Tensor(np.zeros(2), requires_grad=True, name="conv0.kernel")
    with pytest.raises(training.DivergenceError, match="conv0.kernel"):
        training.adam_step([p], training.AdamState(), grads=[np.array([0.0, np.nan])])
    with pytest.raises(ValueError, match="conv0.kernel"):
        training.adam_step([p], training.AdamState())


def test_mse_examples():
    assert training.mse_loss(Tensor([1.0, 2.0]), [1.0, 2.0]).data == 0
    assert training.mse_loss(Tensor([1.0, 2.0]), [1.0, 4.0]).data == 2.0
    with pytest.raises(ValueError):
        training.mse_loss(Tensor([1.0, 2.0]), [1.0, 4.0], mask=[0, 0])


def test_flipping_a_mask_bit_matches_closed_form():
    rng = np.random.default_rng(0)
    pred, target = rng.normal(size=(2, 3, 3, 1)), rng.normal(size=(2, 3, 3, 1))
    pred[:, 1, 1] += 1e6
    mask = np.ones((3, 3))
    mask[1, 1] = 0
    sq = (pred - target) ** 2
    off = training.mse_loss(Tensor(pred), target, mask).data
    assert off == pytest.approx(sq[:, mask > 0].sum() / 16, rel=1e-12)
    on = training.mse_loss(Tensor(pred), target, np.ones((3, 3))).data
    assert on == pytest.approx(sq.sum() / 18, rel=1e-12)


def test_mse_sums_heads_and_differentiates():
    pred = Tensor(np.zeros((1, 2, 2, 3)), requires_grad=True)
    target = np.ones((1, 2, 2, 3))
    with Tape() as tape:
        loss = training.mse_loss(pred, target, np.ones((2, 2)))
    assert loss.data == 3.0
    backward(tape, loss)
    assert np.allclose(pred.grad, -2 / 4)


def test_metrics_and_scaler_examples():
    rmse, mae = training.metrics([1.0, 2.0], [1.0, 4.0])
    assert rmse == pytest.approx(math.sqrt(2), abs=1e-15) and mae == 1.0
    s = training.MinMaxScaler(2.0, 12.0)
    assert s.transform(7.0) == 0.5 and s.inverse(s.transform(7.0)) == 7.0
    with pytest.raises(ValueError):
        training.MinMaxScaler(3.0, 3.0)


def test_metrics_ignore_masked_cells():
    pred = np.zeros((1, 2, 2, 1))
    target = np.array([1.0, 1.0, 1.0, 99.0]).reshape(1, 2, 2, 1)
    assert training.metrics(pred, target, np.array([[1, 1], [1, 0]])) == (1.0, 1.0)


def _series(T, W=3, H=2, seed=0):
    frames = np.random.default_rng(seed).normal(size=(1, T, W, H))
    return data.FrameDataset(frames, np.ones((W, H)), tag="toy")


def test_window_counts_and_order():
    x, y = training.make_windows(_series(30), 25, 5)
    assert x.shape == (1, 3, 2, 25) and y.shape == (1, 3, 2, 1)
    ds = _series(20)
    x, y = training.make_windows(ds, 12, 1)
    assert len(x) == 8
    assert np.array_equal(y[-1, ..., 0], ds.frames[0, 19])
    assert np.array_equal(x[0, ..., 0], ds.frames[0, 0])
    x, y = training.make_windows(ds, 12, [1, 2, 3, 4, 5, 6])
    assert y.shape[-1] == 6 and len(x) == 3
    with pytest.raises(ValueError):
        training.make_windows(_series(10), 8, 3)


def test_split_is_contiguous_and_scaler_train_only():
    ds = _series(100)
    ds = ds.with_frames(np.arange(100.0)[None, :, None, None] * np.ones((1, 100, 3, 2)))
    sp = training.split(ds, (0.6, 0.2, 0.2))
    assert sp.train.frames[0, -1, 0, 0] == 59 and sp.valid.frames[0, 0, 0, 0] == 60
    assert sp.test.frames[0, 0, 0, 0] == 80 and sp.test.length == 20
    assert (sp.scaler.lo, sp.scaler.hi) == (0.0, 59.0)
    assert sp.scaler.transform(99.0) > 1.0
    counts = training.split(_series(6361), (5700, 300, 361))
    assert (counts.train.length, counts.valid.length, counts.test.length) == (5700, 300, 361)
    with pytest.raises(ValueError):
        training.split(ds, (0.5, 0.2, 0.2))


def _pr_oracle(series, l, start, stop):
    """Persistence RMSE over targets t in [start + l, stop) of a [T, W, H] series."""
    t = np.arange(start + l, stop)
    d = series[t] - series[t - 1]
    return math.sqrt(np.mean(d * d))


@pytest.mark.parametrize("normalize", [True, False])
def test_pr_matches_persistence_oracle(normalize):
    cfg = RunConfig(task="windgrid", models=["PR"], W=5, H=4, T=200, l=6, seeds=[0],
                    normalize=normalize, save_checkpoints=False)
    row = run_job(cfg, "PR", 0, prepare(cfg))["rows"][0]
    x = data.generate_windgrid(5, 4, 200, 1.0, seed=1).frames[0]
    assert row["valid_rmse"] == pytest.approx(_pr_oracle(x, 6, 120, 160), rel=1e-12, abs=0)
    assert row["test_rmse"] == pytest.approx(_pr_oracle(x, 6, 160, 200), rel=1e-12, abs=0)


@pytest.fixture(scope="module")
def tiny_batch():
    # centred windgrid windows; an uncentred batch spends its first steps
    # fitting the mean, where Adam momentum can overshoot by a hair
    ds = data.generate_windgrid(6, 6, 60, 1.0, seed=0)
    scaler = training.MinMaxScaler.fit(ds.frames)
    x, y = training.make_windows(ds.with_frames(scaler.transform(ds.frames)), 4, 1)
    return x[:8] - 0.5, y[:8] - 0.5


@pytest.mark.parametrize("tag", [t for t in models.ALL_TAGS if t != "PR"])
def test_loss_non_increasing_on_tiny_batch(tag, tiny_batch):
    x, y = tiny_batch
    model = models.build(tag, 6, 6, 4, width_scale=0.25, seed=0)
    state = training.AdamState()
    losses = [training.train_step(model, x, y, None, state) for _ in range(11)]
    assert all(b <= a for a, b in zip(losses, losses[1:])), losses


def test_checkpoint_is_best_validation_epoch():
    cfg = RunConfig(task="windgrid", models=["CNN"], W=4, H=4, T=120, l=3, epochs=4, seeds=[0],
                    batch_size=16)
    res = run_job(cfg, "CNN", 0, prepare(cfg))
    curve, row = res["curve"], res["rows"][0]
    best = min(curve, key=lambda p: p["valid_mse"])
    assert row["epochs"] == best["epoch"]
    assert row["valid_rmse"] ** 2 == pytest.approx(best["valid_mse"], rel=1e-12)
    assert row["test_rmse"] ** 2 == pytest.approx(best["test_mse"], rel=1e-12)


def test_runs_are_bit_identical():
    cfg = RunConfig(task="windgrid", models=["PR", "LI_CNN"], W=4, H=4, T=100, l=3, epochs=2,
                    seeds=[0, 1], batch_size=16)
    a, b = run_experiment(cfg, write=False), run_experiment(cfg, write=False)
    assert a.rows == b.rows and a.curves == b.curves and a.config_hash == b.config_hash


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=6))
def test_aggregate_recomputable(values):
    rows = [{"model": "M", "horizon": 1, "seed": i, "status": "ok", "params": 3,
             "valid_rmse": v, "test_rmse": 2 * v, "valid_mae": v, "test_mae": v}
            for i, v in enumerate(values)]
    rows.append({**rows[0], "seed": 99, "status": "failed", "valid_rmse": float("nan")})
    (agg,) = aggregate(rows)
    assert agg["n_seeds"] == len(values) and agg["n_failed"] == 1
    assert abs(agg["valid_rmse_mean"] - np.mean(values)) <= 1e-12
    assert abs(agg["test_rmse_std"] - np.std(2 * np.array(values))) <= 1e-12
