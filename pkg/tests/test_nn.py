import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dehaze import nn
from dehaze.nn import BiReLU, Conv2D, SGDConfig, ShapeError

from oracles import conv_direct, maxpool_direct, numeric_grad, rel_error


def rand_conv(rng, kh, kw, cin, cout, bias=True):
    return Conv2D(rng.normal(size=(kh, kw, cin, cout)),
                  rng.normal(size=cout) if bias else np.zeros(cout))


# -- conv2d ------------------------------------------------------------------

def test_conv_delta_kernel_is_identity():
    k = np.zeros((3, 3, 1, 1))
    k[1, 1, 0, 0] = 1.0
    x = np.ones((1, 5, 5, 1))
    np.testing.assert_array_equal(nn.conv2d_forward(x, Conv2D(k, [0.0])), x)


def test_conv_zero_kernel_gives_bias():
    rng = np.random.default_rng(0)
    x = rng.random((2, 6, 5, 3))
    out = nn.conv2d_forward(x, Conv2D(np.zeros((5, 3, 3, 2)), [0.25, -1.5]))
    assert out.shape == (2, 6, 5, 2)
    np.testing.assert_array_equal(out[..., 0], 0.25)
    np.testing.assert_array_equal(out[..., 1], -1.5)


@pytest.mark.parametrize("seed", range(5))
def test_conv_matches_direct_loops(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 4, 4, 2))
    layer = rand_conv(rng, 3, 3, 2, 3)
    ref = conv_direct(x, layer.kernel, layer.bias)
    assert np.max(np.abs(nn.conv2d_forward(x, layer) - ref)) < 1e-12


def test_conv_channel_mismatch_names_both_shapes():
    layer = Conv2D(np.zeros((3, 3, 2, 4)), np.zeros(4))
    with pytest.raises(ShapeError, match=r"\(1, 4, 4, 3\).*\(3, 3, 2, 4\)"):
        nn.conv2d_forward(np.zeros((1, 4, 4, 3)), layer)


def test_conv_rejects_even_kernel():
    with pytest.raises(ShapeError):
        Conv2D(np.zeros((2, 3, 1, 1)), np.zeros(1))


def test_conv_backward_zero_grad():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 5, 5, 2))
    layer = rand_conv(rng, 3, 3, 2, 2)
    gx, gk, gb = nn.conv2d_backward(x, layer, np.zeros((1, 5, 5, 2)))
    assert not gx.any() and not gk.any() and not gb.any()


def test_conv_backward_delta_kernel_passes_gradient_through():
    k = np.zeros((3, 3, 1, 1))
    k[1, 1, 0, 0] = 1.0
    g = np.random.default_rng(2).normal(size=(1, 5, 5, 1))
    gx, _, _ = nn.conv2d_backward(np.ones((1, 5, 5, 1)), Conv2D(k, [0.0]), g)
    np.testing.assert_array_equal(gx, g)


def test_conv_backward_shape_check():
    layer = Conv2D(np.zeros((3, 3, 1, 2)), np.zeros(2))
    with pytest.raises(ShapeError):
        nn.conv2d_backward(np.zeros((1, 4, 4, 1)), layer, np.zeros((1, 4, 4, 3)))


@pytest.mark.parametrize("ksize", [(3, 3), (5, 3), (1, 1)])
def test_conv_backward_finite_differences(ksize):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 4, 5, 2))
    layer = rand_conv(rng, *ksize, 2, 3)
    g = rng.normal(size=(2, 4, 5, 3))

    def f():
        return float(np.sum(g * nn.conv2d_forward(x, layer)))

    gx, gk, gb = nn.conv2d_backward(x, layer, g)
    assert rel_error(gx, numeric_grad(f, x)).max() < 1e-4
    assert rel_error(gk, numeric_grad(f, layer.kernel)).max() < 1e-4
    assert rel_error(gb, numeric_grad(f, layer.bias)).max() < 1e-4


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_conv_is_linear_without_bias(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 1, 6, 5, 2))
    layer = rand_conv(rng, 3, 5, 2, 2, bias=False)
    lhs = nn.conv2d_forward(a * x + b * y, layer)
    rhs = a * nn.conv2d_forward(x, layer) + b * nn.conv2d_forward(y, layer)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), k=st.sampled_from([1, 3, 5, 7]))
def test_spatial_ops_preserve_shape(h, w, k):
    x = np.random.default_rng(h * 10 + w).normal(size=(2, h, w, 3))
    assert nn.conv2d_forward(x, Conv2D(np.zeros((k, k, 3, 4)), np.zeros(4))).shape == (2, h, w, 4)
    assert nn.maxpool_spatial_forward(x, k)[0].shape == x.shape


# -- max pooling -------------------------------------------------------------

def test_maxpool_constant():
    out, _ = nn.maxpool_spatial_forward(np.full((1, 6, 7, 2), 0.3), 7)
    np.testing.assert_array_equal(out, 0.3)


def test_maxpool_point_dilates_to_window():
    x = np.zeros((1, 12, 12, 1))
    x[0, 5, 6, 0] = 1.0
    out, _ = nn.maxpool_spatial_forward(x, 7)
    expected = np.zeros_like(x)
    expected[0, 2:9, 3:10, 0] = 1.0
    np.testing.assert_array_equal(out, expected)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("window", [3, 7])
def test_maxpool_matches_direct_loops(seed, window):
    x = np.random.default_rng(seed).normal(size=(1, 6, 6, 1))
    out, _ = nn.maxpool_spatial_forward(x, window)
    np.testing.assert_array_equal(out, maxpool_direct(x, window))


def test_maxpool_rejects_even_window_and_stride():
    with pytest.raises(ValueError):
        nn.maxpool_spatial_forward(np.zeros((1, 4, 4, 1)), 4)
    with pytest.raises(ValueError):
        nn.maxpool_spatial_forward(np.zeros((1, 4, 4, 1)), 3, stride=2)


def test_maxpool_ties_go_to_first_row_major_position():
    x = np.ones((1, 5, 5, 1))
    _, idx = nn.maxpool_spatial_forward(x, 3)
    winners = idx.winners()[0, ..., 0]
    # interior pixels: the window's top-left cell; top row / left column are clamped
    assert winners[2, 2] == 0
    assert winners[0, 0] == 1 * 3 + 1
    assert winners[0, 2] == 1 * 3 + 0


def test_maxpool_backward_zero_and_conservation():
    rng = np.random.default_rng(4)
    x = np.full((2, 6, 6, 3), 0.5)
    _, idx = nn.maxpool_spatial_forward(x, 7)
    assert not nn.maxpool_spatial_backward(idx, np.zeros_like(x)).any()
    g = rng.normal(size=x.shape)
    assert np.isclose(nn.maxpool_spatial_backward(idx, g).sum(), g.sum(), rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), window=st.sampled_from([1, 3, 5, 7]))
def test_maxpool_backward_conserves_mass(seed, window):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 3, size=(1, 5, 6, 2)).astype(float)  # plenty of ties
    _, idx = nn.maxpool_spatial_forward(x, window)
    g = rng.normal(size=x.shape)
    np.testing.assert_allclose(nn.maxpool_spatial_backward(idx, g).sum(), g.sum(), atol=1e-12)


def test_maxpool_backward_routes_to_reported_winner():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 6, 6, 1))
    _, idx = nn.maxpool_spatial_forward(x, 3)
    winners = idx.winners()
    expected = np.zeros_like(x)
    g = rng.normal(size=x.shape)
    for y in range(6):
        for xx in range(6):
            dy, dx = divmod(int(winners[0, y, xx, 0]), 3)
            expected[0, y + dy - 1, xx + dx - 1, 0] += g[0, y, xx, 0]
    np.testing.assert_allclose(nn.maxpool_spatial_backward(idx, g), expected, atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_maxpool_backward_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 6, 6, 2))  # distinct values: no ties
    g = rng.normal(size=x.shape)
    _, idx = nn.maxpool_spatial_forward(x, 3)

    def f():
        return float(np.sum(g * nn.maxpool_spatial_forward(x, 3)[0]))

    assert rel_error(nn.maxpool_spatial_backward(idx, g), numeric_grad(f, x)).max() < 1e-4


# -- channel group max / concat ---------------------------------------------

def test_group_max_idempotent_and_dominance():
    a = np.random.default_rng(6).normal(size=(1, 3, 3, 4))
    np.testing.assert_array_equal(nn.channel_group_max(a, a, a), a)
    np.testing.assert_array_equal(nn.channel_group_max(a, a - 1, a - 2), a)


def test_group_max_matches_elementwise_max():
    r, g, b = np.random.default_rng(7).normal(size=(3, 2, 4, 4, 5))
    out = nn.channel_group_max(r, g, b)
    ref = np.array([max(t) for t in zip(r.ravel(), g.ravel(), b.ravel())]).reshape(r.shape)
    np.testing.assert_array_equal(out, ref)


def test_group_max_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.channel_group_max(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 4)))


def test_group_max_backward_finite_differences():
    rng = np.random.default_rng(8)
    r, g, b = rng.normal(size=(3, 1, 3, 3, 4))
    go = rng.normal(size=r.shape)
    grads = nn.channel_group_max_backward(r, g, b, go)
    for arr, analytic in zip((r, g, b), grads):
        num = numeric_grad(lambda: float(np.sum(go * nn.channel_group_max(r, g, b))), arr)
        assert rel_error(analytic, num).max() < 1e-4


def test_concat_single_and_network_width():
    x = np.random.default_rng(9).normal(size=(1, 3, 3, 5))
    np.testing.assert_array_equal(nn.concat_channels([x]), x)
    parts = [np.full((1, 4, 4, 16), i, dtype=float) for i in range(3)]
    assert nn.concat_channels(parts).shape[3] == 48


def test_concat_round_trip():
    rng = np.random.default_rng(10)
    parts = [rng.normal(size=(2, 3, 4, c)) for c in (1, 4, 2)]
    back = nn.split_channels(nn.concat_channels(parts), [1, 4, 2])
    for a, b in zip(parts, back):
        assert np.array_equal(a, b)


def test_concat_spatial_mismatch():
    with pytest.raises(ShapeError):
        nn.concat_channels([np.zeros((1, 3, 3, 1)), np.zeros((1, 3, 4, 1))])


# -- BiReLU ------------------------------------------------------------------

def test_birelu_values():
    act = BiReLU()
    np.testing.assert_array_equal(nn.birelu_forward(np.array([0.5, -0.3, 1.7]), act), [0.5, 0.0, 1.0])


def test_birelu_rejects_bad_bounds():
    with pytest.raises(ValueError):
        BiReLU(1.0, 1.0)


def test_birelu_backward_finite_differences():
    rng = np.random.default_rng(11)
    act = BiReLU(0.0, 1.0)
    x = rng.uniform(-1, 2, size=200)
    x = x[np.minimum(np.abs(x), np.abs(x - 1)) > 1e-3]  # away from the kinks
    g = rng.normal(size=x.shape)
    num = numeric_grad(lambda: float(np.sum(g * nn.birelu_forward(x, act))), x)
    analytic = nn.birelu_backward(x, act, g)
    assert rel_error(analytic, num).max() < 1e-4
    inside = (x > 0) & (x < 1)
    np.testing.assert_array_equal(analytic[inside], g[inside])
    assert not analytic[~inside].any()


@settings(max_examples=50, deadline=None)
@given(lo=st.floats(-5, 5), width=st.floats(0.01, 5), seed=st.integers(0, 1000))
def test_birelu_output_in_bounds(lo, width, seed):
    act = BiReLU(lo, lo + width)
    out = nn.birelu_forward(np.random.default_rng(seed).normal(scale=10, size=50), act)
    assert out.min() >= act.t_min and out.max() <= act.t_max


# -- MSE / SGD ---------------------------------------------------------------

def test_mse_equal_and_offset():
    a = np.random.default_rng(12).random((1, 4, 4, 1))
    loss, grad = nn.mse_loss(a, a)
    assert loss == 0 and not grad.any()
    loss, _ = nn.mse_loss(a + 0.1, a)
    assert loss == pytest.approx(0.01, abs=1e-15)


def test_mse_grad_finite_differences():
    rng = np.random.default_rng(13)
    p, t = rng.normal(size=(2, 2, 3, 3, 1))
    _, grad = nn.mse_loss(p, t)
    num = numeric_grad(lambda: nn.mse_loss(p, t)[0], p)
    assert rel_error(grad, num).max() < 1e-6


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.mse_loss(np.zeros(3), np.zeros(4))


def test_sgd_config_validation():
    for bad in (dict(learning_rate=0), dict(batch_size=0), dict(epochs=0)):
        with pytest.raises(ValueError):
            SGDConfig(**bad)
    cfg = SGDConfig()
    assert (cfg.learning_rate, cfg.batch_size, cfg.epochs) == (0.002, 64, 18)


def test_sgd_step_arithmetic():
    cfg = SGDConfig(learning_rate=0.002)
    out = nn.sgd_step({"p": np.array([1.0])}, {"p": np.array([0.5])}, cfg)
    assert out["p"][0] == pytest.approx(0.999, abs=1e-15)
    same = nn.sgd_step({"p": np.array([1.0, 2.0])}, {"p": np.zeros(2)}, cfg)
    np.testing.assert_array_equal(same["p"], [1.0, 2.0])


def test_sgd_step_structure_mismatch():
    with pytest.raises(KeyError):
        nn.sgd_step({"a": np.zeros(1)}, {"b": np.zeros(1)}, SGDConfig())
    with pytest.raises(ShapeError):
        nn.sgd_step({"a": np.zeros(1)}, {"a": np.zeros(2)}, SGDConfig())


@settings(max_examples=50, deadline=None)
@given(curv=st.floats(0.1, 100), p0=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3),
       frac=st.floats(0.01, 0.99))
def test_sgd_decreases_quadratic_below_stability_bound(curv, p0, frac):
    # loss = curv/2 * p^2, stable for lr < 2/curv
    cfg = SGDConfig(learning_rate=frac * 2 / curv)
    p = {"p": np.array([p0])}
    new = nn.sgd_step(p, {"p": curv * p["p"]}, cfg)
    assert 0.5 * curv * new["p"][0] ** 2 < 0.5 * curv * p0 ** 2
