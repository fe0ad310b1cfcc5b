import numpy as np
import pytest

from secseg.field import softmax
from secseg.network import (Conv, Dropout, NetConfig, ReLU, backward, default_config, forward,
                            init_params, receptive_support)

from helpers import central_diff, rel_error


def test_init_is_deterministic():
    cfg = default_config(4)
    a, b = init_params(cfg, 3), init_params(cfg, 3)
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    assert not np.array_equal(a["conv0.W"], init_params(cfg, 4)["conv0.W"])


def test_init_statistics():
    # wide prediction layer so the sample std is tight
    cfg = NetConfig(layers=(Conv(3, 64), ReLU(), Conv(64, 200, kernel=1)), classes=200, output_stride=1)
    p = init_params(cfg, 0)
    w = p["conv2.W"]
    assert w.size >= 10_000
    assert abs(w.std() - 0.1) < 0.01
    assert abs(p["conv0.W"].std() - np.sqrt(2 / 27)) < 0.1 * np.sqrt(2 / 27)
    for k in p:
        if k.endswith(".b"):
            assert not p[k].any()


def test_zero_weights_give_uniform_softmax():
    cfg = default_config(5)
    p = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    s, _ = forward(p, np.random.default_rng(0).random((8, 8, 3)), config=cfg)
    np.testing.assert_allclose(softmax(s), 0.2, atol=1e-15)


def test_output_shape_and_errors():
    cfg = default_config(4)
    p = init_params(cfg)
    s, _ = forward(p, np.zeros((32, 32, 3)), config=cfg)
    assert s.shape == (16, 16, 4)
    s, _ = forward(p, np.zeros((2, 8, 12, 3)), config=cfg)
    assert s.shape == (2, 4, 6, 4)
    with pytest.raises(ValueError):
        forward(p, np.zeros((7, 8, 3)), config=cfg)
    with pytest.raises(ValueError):
        forward(p, np.zeros((8, 8, 4)), config=cfg)


def test_single_pixel_1x1_closed_form():
    cfg = NetConfig(layers=(Conv(3, 2, kernel=1),), classes=2, output_stride=1)
    W = np.array([[1.0, -1.0], [0.5, 2.0], [0.0, 1.0]]).reshape(1, 1, 3, 2)
    p = {"conv0.W": W, "conv0.b": np.array([0.1, -0.2])}
    x = np.array([[[1.0, 2.0, 3.0]]])
    s, cache = forward(p, x, config=cfg)
    np.testing.assert_allclose(s[0, 0], [1 + 1.0 + 0.1, -1 + 4 + 3 - 0.2])
    g = backward(p, cache, np.array([[[1.0, 0.0]]]), config=cfg)
    np.testing.assert_allclose(g["conv0.W"][0, 0, :, 0], [1, 2, 3])
    np.testing.assert_allclose(g["conv0.W"][0, 0, :, 1], 0)
    np.testing.assert_allclose(g["conv0.b"], [1, 0])


def test_dilation_widens_receptive_field():
    plain = NetConfig(layers=(Conv(3, 2, kernel=3, padding=1),), classes=2, output_stride=1)
    dil = NetConfig(layers=(Conv(3, 2, kernel=3, padding=2, dilation=2),), classes=2, output_stride=1)
    sp = receptive_support(plain, init_params(plain), (9, 9), (4, 4))
    sd = receptive_support(dil, init_params(dil), (9, 9), (4, 4))
    ys, xs = np.nonzero(sp)
    assert (ys.min(), ys.max(), xs.min(), xs.max()) == (3, 5, 3, 5)
    ys, xs = np.nonzero(sd)
    assert (ys.min(), ys.max(), xs.min(), xs.max()) == (2, 6, 2, 6)
    assert sd.sum() == sp.sum() == 9


def test_default_receptive_field():
    cfg = default_config(3)
    sup = receptive_support(cfg, init_params(cfg), (32, 32), (8, 8))
    ys, xs = np.nonzero(sup)
    # stride-2 3x3 then dilation-2 3x3 at stride 2: 3 + 2 * 2 * 2 = 11 pixels
    assert ys.max() - ys.min() + 1 == 11 and xs.max() - xs.min() + 1 == 11


def test_stale_cache_rejected():
    cfg = default_config(3)
    p = init_params(cfg)
    s, cache = forward(p, np.random.default_rng(0).random((8, 8, 3)), config=cfg)
    backward(p, cache, np.ones_like(s), config=cfg)
    with pytest.raises(ValueError, match="stale"):
        backward(p, cache, np.ones_like(s), config=cfg)


def test_cache_param_mismatch_rejected():
    cfg = default_config(3)
    s, cache = forward(init_params(cfg), np.zeros((8, 8, 3)), config=cfg)
    with pytest.raises(ValueError):
        backward(init_params(default_config(3, hidden=(8, 8))), cache, np.ones_like(s), config=cfg)


def test_eval_mode_ignores_dropout():
    cfg = default_config(3, dropout=0.5)
    p = init_params(cfg)
    x = np.random.default_rng(1).random((8, 8, 3))
    a, _ = forward(p, x, config=cfg)
    b, _ = forward(p, x, config=cfg)
    c, _ = forward(p, x, train_mode=True, rng=np.random.default_rng(0), config=cfg)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_inverted_dropout_preserves_mean():
    cfg = NetConfig(layers=(Conv(3, 200, kernel=1), Dropout(0.5), Conv(200, 2, kernel=1)), classes=2,
                    output_stride=1)
    p = init_params(cfg)
    p["conv0.b"][:] = 1.0
    x = np.zeros((1, 64, 64, 3))  # mean over 4096 pixels: std about 0.02
    a, _ = forward(p, x, config=cfg)
    b, _ = forward(p, x, train_mode=True, rng=np.random.default_rng(0), config=cfg)
    np.testing.assert_allclose(b.mean(axis=(0, 1, 2)), a.mean(axis=(0, 1, 2)), atol=0.1)


def _param_fd(cfg, params, x, up, train_mode=False, seed=0):
    def loss(p):
        s, _ = forward(p, x, train_mode=train_mode, rng=np.random.default_rng(seed), config=cfg)
        return float(np.sum(up * s))
    _, cache = forward(params, x, train_mode=train_mode, rng=np.random.default_rng(seed), config=cfg)
    grads = backward(params, cache, up, config=cfg)
    worst = 0.0
    for k in params:
        def lk(v, k=k):
            q = dict(params)
            q[k] = v
            return loss(q)
        worst = max(worst, rel_error(grads[k], central_diff(lk, params[k].copy())))
    return worst


@pytest.mark.parametrize("layer,stride", [
    (Conv(2, 3, kernel=3, stride=2, padding=1), 2),
    (Conv(2, 3, kernel=3, padding=2, dilation=2), 1),
    (Conv(2, 3, kernel=3, padding=1), 1),
])
def test_conv_gradients(layer, stride):
    cfg = NetConfig(layers=(layer,), classes=3, output_stride=stride, in_channels=2)
    rng = np.random.default_rng(0)
    p = init_params(cfg, 1)
    p["conv0.b"] = rng.normal(size=3)
    x = rng.normal(size=(6, 6, 2))
    s, _ = forward(p, x, config=cfg)
    assert _param_fd(cfg, p, x, rng.normal(size=s.shape)) < 1e-4


def test_dropout_gradient_with_fixed_mask():
    cfg = NetConfig(layers=(Conv(2, 4, kernel=1), Dropout(0.3), Conv(4, 2, kernel=1)), classes=2,
                    output_stride=1, in_channels=2)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 4, 2))
    assert _param_fd(cfg, init_params(cfg, 0), x, rng.normal(size=(4, 4, 2)), train_mode=True) < 1e-4


def test_input_gradient():
    cfg = default_config(3, hidden=(4, 4))
    rng = np.random.default_rng(3)
    p = init_params(cfg, 2)
    x = rng.random((8, 8, 3))
    s, cache = forward(p, x, config=cfg)
    up = rng.normal(size=s.shape)
    _, gx = backward(p, cache, up, config=cfg, return_input_grad=True)
    numeric = central_diff(lambda v: float(np.sum(up * forward(p, v, config=cfg)[0])), x.copy())
    assert rel_error(gx, numeric) < 1e-4


def test_two_layer_net_on_8x8():
    cfg = NetConfig(layers=(Conv(3, 4, kernel=3, stride=2, padding=1), ReLU(), Conv(4, 3, kernel=1)),
                    classes=3, output_stride=2)
    rng = np.random.default_rng(4)
    p = init_params(cfg, 5)
    p["conv0.b"] = rng.normal(0, 0.1, size=4)
    x = rng.random((8, 8, 3))
    assert _param_fd(cfg, p, x, rng.normal(size=(4, 4, 3))) < 1e-4


def test_config_round_trip_and_validation():
    cfg = default_config(4)
    assert NetConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        NetConfig(layers=(Conv(3, 4), Conv(5, 2)), classes=2)
    with pytest.raises(ValueError):
        NetConfig(layers=(Conv(3, 4),), classes=2)
    with pytest.raises(ValueError):
        NetConfig.from_dict({"layers": [{"type": "pool"}], "classes": 2})
