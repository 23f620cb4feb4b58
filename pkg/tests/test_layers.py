import numpy as np
import pytest

from cfosseg.nn import LayerSpec, Network, bce_loss, bce_loss_grad
from cfosseg.nn.layers import Concat, Conv, MaxPool2, ReLU, Sigmoid, UpConv2, Upsample2

from oracles import (
    bce_naive,
    conv_same_naive,
    finite_difference_grads,
    maxpool2_naive,
    relative_error,
    upconv2_naive,
)


def test_conv3x3_ones_overlap_counting():
    x = np.ones((1, 3, 3, 1), dtype=np.float32)
    w = np.ones((3, 3, 1, 1), dtype=np.float32)
    layer = Conv(w, np.zeros(1, dtype=np.float32))
    out = layer.forward(x)[0, :, :, 0]
    expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=np.float32)
    assert np.array_equal(out, expected)


def test_conv1x1_identity():
    x = np.random.default_rng(0).random((2, 5, 7, 1)).astype(np.float32)
    layer = Conv(np.ones((1, 1, 1, 1), dtype=np.float32), np.zeros(1, dtype=np.float32))
    assert np.array_equal(layer.forward(x), x)


def test_conv3x3_matches_naive_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 8, 8, 2)).astype(np.float32)
    w = rng.standard_normal((3, 3, 2, 4)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    got = Conv(w, b).forward(x)
    ref = conv_same_naive(x, w, b)
    denom = np.maximum(np.abs(ref), 1.0)
    assert np.max(np.abs(got - ref) / denom) < 1e-6


def test_conv_channel_mismatch_raises():
    layer = Conv(np.zeros((3, 3, 2, 4), dtype=np.float32), np.zeros(4, dtype=np.float32))
    with pytest.raises(ValueError, match="channels"):
        layer.forward(np.zeros((1, 4, 4, 3), dtype=np.float32))


def test_maxpool_block():
    x = np.array([[1, 2], [3, 4]], dtype=np.float32).reshape(1, 2, 2, 1)
    out = MaxPool2().forward(x)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 4


def test_maxpool_constant_tie_goes_top_left():
    x = np.full((1, 4, 4, 1), 5.0, dtype=np.float32)
    layer = MaxPool2()
    out = layer.forward(x, train=True)
    assert np.all(out == 5.0)
    grad = layer.backward(np.ones_like(out))
    # only the top-left cell of each block received gradient
    expected = np.zeros((1, 4, 4, 1))
    expected[0, 0::2, 0::2, 0] = 1.0
    assert np.array_equal(grad, expected)


def test_maxpool_matches_blockmax_oracle():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((3, 6, 8, 5)).astype(np.float32)
    assert np.array_equal(MaxPool2().forward(x), maxpool2_naive(x))


def test_maxpool_odd_dims_rejected():
    with pytest.raises(ValueError, match="even"):
        MaxPool2().forward(np.zeros((1, 3, 4, 1), dtype=np.float32))


def test_upconv_single_cell():
    x = np.full((1, 1, 1, 1), 3.5, dtype=np.float32)
    w = np.ones((2, 2, 1, 1), dtype=np.float32)
    out = UpConv2(w, np.zeros(1, dtype=np.float32)).forward(x)
    assert out.shape == (1, 2, 2, 1)
    assert np.all(out == 3.5)


def test_upconv_zero_input():
    w = np.random.default_rng(1).standard_normal((2, 2, 3, 2)).astype(np.float32)
    out = UpConv2(w, np.zeros(2, dtype=np.float32)).forward(np.zeros((2, 4, 4, 3), dtype=np.float32))
    assert np.all(out == 0)


def test_upconv_matches_scatter_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 5, 4)).astype(np.float32)
    w = rng.standard_normal((2, 2, 4, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    got = UpConv2(w, b).forward(x)
    ref = upconv2_naive(x, w, b)
    assert np.max(np.abs(got - ref)) < 1e-5


def test_relu_values():
    x = np.array([-1.0, 0.0, 2.0], dtype=np.float32).reshape(1, 1, 3, 1)
    assert np.array_equal(ReLU().forward(x).ravel(), [0, 0, 2])


def test_sigmoid_at_zero():
    x = np.zeros((1, 1, 1, 1), dtype=np.float32)
    assert Sigmoid().forward(x)[0, 0, 0, 0] == 0.5


def test_sigmoid_grad_matches_finite_difference():
    rng = np.random.default_rng(5)
    z = rng.uniform(-3, 3, size=(1, 4, 4, 2))
    layer = Sigmoid()
    y = layer.forward(z, train=True)
    upstream = rng.standard_normal(y.shape)
    analytic = layer.backward(upstream)
    h = 1e-6
    numeric = np.zeros_like(z)
    for i in np.ndindex(z.shape):
        zp = z.copy()
        zp[i] += h
        zm = z.copy()
        zm[i] -= h
        fp = (Sigmoid().forward(zp) * upstream).sum()
        fm = (Sigmoid().forward(zm) * upstream).sum()
        numeric[i] = (fp - fm) / (2 * h)
    assert np.max(np.abs(analytic - numeric)) < 1e-6


def test_concat_requires_matching_spatial_dims():
    with pytest.raises(ValueError, match="spatial"):
        Concat().forward(np.zeros((1, 4, 4, 2), dtype=np.float32),
                         np.zeros((1, 2, 2, 2), dtype=np.float32))


def test_upsample_then_pool_is_identity_on_any_tensor():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 4, 6, 3)).astype(np.float32)
    up = Upsample2().forward(x)
    back = MaxPool2().forward(up)
    assert np.array_equal(back, x)


def test_backward_without_forward_is_a_state_error():
    for layer in (Conv(np.zeros((3, 3, 1, 1), np.float32), np.zeros(1, np.float32)),
                  MaxPool2(), UpConv2(np.zeros((2, 2, 1, 1), np.float32), np.zeros(1, np.float32)),
                  Upsample2(), ReLU(), Sigmoid()):
        with pytest.raises(RuntimeError, match="forward"):
            layer.backward(np.zeros((1, 2, 2, 1), dtype=np.float32))


def test_bce_perfect_prediction_is_tiny():
    t = np.array([0.0, 1.0, 1.0, 0.0], dtype=np.float32)
    assert bce_loss(t.copy(), t) <= 1e-6


def test_bce_half_everywhere_is_ln2():
    pred = np.full((4, 4), 0.5, dtype=np.float32)
    target = np.zeros((4, 4), dtype=np.float32)
    assert abs(bce_loss(pred, target) - np.log(2.0)) < 1e-6


def test_bce_matches_scalar_loop_oracle():
    rng = np.random.default_rng(21)
    pred = rng.uniform(0.01, 0.99, size=(3, 7)).astype(np.float64)
    target = (rng.random((3, 7)) > 0.5).astype(np.float64)
    assert abs(bce_loss(pred, target) - bce_naive(pred, target)) < 1e-10


def test_bce_shape_mismatch():
    with pytest.raises(ValueError):
        bce_loss(np.zeros(3), np.zeros(4))


LAYER_CONFIGS = [
    ("conv3x3", dict(kind="conv3x3")),
    ("conv1x1", dict(kind="conv1x1")),
    ("upconv2", dict(kind="upconv2")),
    ("maxpool2", dict(kind="maxpool2")),
    ("upsample2", dict(kind="upsample2")),
    ("relu", dict(kind="relu")),
    ("sigmoid", dict(kind="sigmoid")),
]


@pytest.mark.parametrize("name,cfg", LAYER_CONFIGS)
def test_every_layer_kind_gradient_check(name, cfg):
    """Each layer kind wrapped in a tiny network passes central differences."""
    rng = np.random.default_rng(hash(name) % 2 ** 31)
    for trial in range(4):
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        h = int(rng.integers(1, 4)) * 2
        w = int(rng.integers(1, 4)) * 2
        kind = cfg["kind"]
        if kind in ("maxpool2", "upsample2", "relu", "sigmoid"):
            specs = [LayerSpec("conv3x3", cin, cout), LayerSpec(kind), LayerSpec("sigmoid")]
        else:
            specs = [LayerSpec(kind, cin, cout), LayerSpec("sigmoid")]
        net = Network(specs, seed=trial, dtype=np.float64)
        x = rng.uniform(-1, 1, size=(2, h, w, cin))
        out_shape = net.forward(x).shape
        target = (rng.random(out_shape) > 0.5).astype(np.float64)

        def loss_fn():
            return bce_loss(net.forward(x), target)

        pred = net.forward(x, train=True)
        loss, dloss = bce_loss_grad(pred, target)
        net.backward(dloss)
        analytic = net.grads()
        numeric = finite_difference_grads(loss_fn, net.params(), h=1e-4,
                                          max_entries=40, rng=rng)
        for a, n in zip(analytic, numeric):
            assert relative_error(a, n) < 1e-4, f"{name} trial {trial}"
