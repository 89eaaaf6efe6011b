import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locconv import models
from locconv.tensor import ShapeError, Tensor


def conv_count(k1, k2, n_in, n_out):
    return k1 * k2 * n_in * n_out + n_out


def test_ball_parameter_counts():
    counts = {tag: models.param_count(models.ball_spec(tag), 30, 30, 25) for tag in models.BALL_TAGS}
    assert counts == {"BALLS_CNN": 242043, "BALLS_LI_CNN": 237841,
                      "BALLS_COORDCONV": 247842, "BALLS_RANDOMCONV": 247842}
    assert counts["BALLS_LI_CNN"] < counts["BALLS_CNN"]


def test_ball_models_instantiate_with_matching_counts():
    built = models.build_bouncing_ball_models(0.25)
    for tag, m in built.items():
        assert m.n_params == models.param_count(m.spec, 30, 30, 25)
        assert m(Tensor(np.zeros((1, 30, 30, 25)))).shape == (1, 30, 30, 1)


def test_cnn_count_matches_hand_sum():
    T = 12
    expected = (conv_count(5, 5, T, 30) + conv_count(4, 4, 30, 30) + conv_count(3, 3, 30, 30)
                + conv_count(1, 1, 30, 1))
    assert models.param_count(models.model_spec("CNN", 10, 10, T), 10, 10, T) == expected


def test_li_cnn_enters_trunk_with_t_plus_2_channels():
    rows = models.infer(models.model_spec("LI_CNN", 10, 10, 12), 10, 10, 12)
    assert rows[0][1] == (10, 10, 14)
    assert isinstance(rows[1][0], models.Conv) and rows[1][0].filters == 28


def test_table_channel_arithmetic():
    T = 12
    assert models.infer(models.model_spec("LI_LW_CNN", 8, 8, T), 8, 8, T)[0][1] == (8, 8, T + 4)
    assert models.infer(models.model_spec("LI_LW_MINUS_I_CNN", 8, 8, T), 8, 8, T)[0][1] == (8, 8, 4)
    rows = models.infer(models.model_spec("PERSISTENT_LI_LW_CNN", 8, 8, T), 8, 8, T)
    widths = [shape[-1] for layer, shape, _ in rows if isinstance(layer, models.AppendPersistent)]
    assert widths == [34, 34, 34]


def test_localization_params_added():
    W, H, T = 9, 7, 12
    base = models.param_count(models.model_spec("CNN", W, H, T), W, H, T)
    z = (base - conv_count(5, 5, T, 30) + conv_count(5, 5, T + 2, 28)
         - conv_count(4, 4, 30, 30) + conv_count(4, 4, 28, 30))
    li = models.param_count(models.model_spec("LI_CNN", W, H, T), W, H, T)
    lw = models.param_count(models.model_spec("LW_CNN", W, H, T), W, H, T)
    assert li == z + W * H * 2
    assert lw == z + W * H * 2 * T


def test_pr_is_parameter_free_and_returns_last_frame():
    x = np.random.default_rng(0).normal(size=(3, 6, 5, 4))
    m = models.build("PR", 6, 5, 4)
    assert m.n_params == 0
    assert np.array_equal(m(Tensor(x)).data[..., 0], x[..., -1])


def test_multi_horizon_heads():
    m = models.build("LI_CNN", 6, 6, 8, width_scale=0.25, n_out=6)
    assert m(Tensor(np.zeros((2, 6, 6, 8)))).shape == (2, 6, 6, 6)
    pr = models.build("PR", 6, 6, 8, n_out=6)
    x = np.random.default_rng(1).normal(size=(1, 6, 6, 8))
    assert np.all(pr(Tensor(x)).data == x[..., -1:])


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(models.ALL_TAGS), st.integers(1, 4).map(lambda k: 2 * k), st.integers(1, 4).map(lambda k: 2 * k),
       st.integers(1, 6))
def test_every_tag_maps_grid_to_grid(tag, W, H, T):
    m = models.build(tag, W, H, T, width_scale=0.25, seed=1)
    out = m(Tensor(np.random.default_rng(0).random((W, H, T))))
    assert out.shape == (W, H, 1)
    assert m.n_params == models.param_count(m.spec, W, H, T)


def test_build_is_deterministic():
    a = models.build("PERSISTENT_LI_LW_CNN", 6, 6, 5, 0.25, seed=3)
    b = models.build("PERSISTENT_LI_LW_CNN", 6, 6, 5, 0.25, seed=3)
    assert a.state().keys() == b.state().keys()
    assert all(np.array_equal(a.state()[k], b.state()[k]) for k in a.state())


@pytest.mark.parametrize("tag", models.LOCALIZED_TAGS)
def test_fairness_within_five_percent(tag):
    W, H, T = 10, 10, 12
    cnn = models.param_count(models.model_spec("CNN", W, H, T), W, H, T)
    matched = models.param_count(models.model_spec(tag, W, H, T, match_params=True), W, H, T)
    assert abs(matched - cnn) <= 0.05 * cnn


def test_unknown_tag_and_bad_scale():
    with pytest.raises(ValueError):
        models.build("RESNET", 4, 4, 4)
    with pytest.raises(ValueError):
        models.build("CNN", 4, 4, 4, width_scale=0.01)
    with pytest.raises(ValueError):
        models.build("CNN", 4, 4, 4, width_scale=0)


def test_pdcnn_needs_even_grid():
    with pytest.raises(ShapeError):
        models.build("PDCNN", 5, 6, 3)


def test_persistent_marker_without_definition_fails_statically():
    spec = models.ModelSpec("bad", (models.Concat((models.Input(),)), models.AppendPersistent()))
    with pytest.raises(ShapeError):
        models.infer(spec, 4, 4, 2)


def test_text_form():
    text = models.describe(models.model_spec("LI_CNN", 10, 10, 12), 10, 10, 12)
    assert text.startswith("[I, LI(2)] -[10×10×14]-> ReLU(C(5×5×28))")
    assert text.endswith("C(1×1×1)")
    assert "P := [LI(2), LW(2) ⊗(1,1) I]" in models.describe(
        models.model_spec("PERSISTENT_LI_LW_CNN", 8, 8, 4), 8, 8, 4)


def test_tag_normalization():
    assert models.normalize_tag("li-cnn") == "LI_CNN"
    assert models.normalize_tag("coordconv") == "CoordConv"


def test_hidden_activation_reaches_ball_models():
    spec = models.model_spec("BALLS_LI_CNN", 30, 30, 25, 0.25, hidden_activation="sigmoid")
    assert [layer.activation for layer in spec.layers if isinstance(layer, models.Conv)] == \
        ["sigmoid", "sigmoid", "linear"]
