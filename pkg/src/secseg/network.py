"""A small fully convolutional segmentation network with hand-written backprop.

Activations are ``(batch, height, width, channels)`` float64 arrays.
Parameters live in a flat dict ``{"conv0.W": ..., "conv0.b": ...}`` with
conv weights shaped ``(kh, kw, in, out)``.
"""

from dataclasses import dataclass, field, asdict

import numpy as np


@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def out_size(self, n):
        return (n + 2 * self.padding - self.dilation * (self.kernel - 1) - 1) // self.stride + 1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


LAYER_TYPES = {"conv": Conv, "relu": ReLU, "dropout": Dropout}


@dataclass(frozen=True)
class NetConfig:
    layers: tuple
    classes: int
    output_stride: int = 2
    in_channels: int = 3

    def __post_init__(self):
        convs = [l for l in self.layers if isinstance(l, Conv)]
        if not convs:
            raise ValueError("network needs at least one conv layer")
        if convs[-1].out_channels != self.classes:
            raise ValueError("final conv must emit one channel per class")
        if convs[0].in_channels != self.in_channels:
            raise ValueError("first conv must consume the image channels")
        for a, b in zip(convs, convs[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError("conv channel counts do not chain")

    def conv_names(self):
        return [f"conv{i}" for i, l in enumerate(self.layers) if isinstance(l, Conv)]

    def to_dict(self):
        layers = []
        for l in self.layers:
            kind = {Conv: "conv", ReLU: "relu", Dropout: "dropout"}[type(l)]
            layers.append({"type": kind, **asdict(l)})
        return {"layers": layers, "classes": self.classes,
                "output_stride": self.output_stride, "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d):
        layers = []
        for spec in d["layers"]:
            spec = dict(spec)
            kind = spec.pop("type")
            if kind not in LAYER_TYPES:
                raise ValueError(f"unknown layer type {kind!r}")
            layers.append(LAYER_TYPES[kind](**spec))
        return cls(layers=tuple(layers), classes=d["classes"],
                   output_stride=d.get("output_stride", 2), in_channels=d.get("in_channels", 3))


def default_config(classes, hidden=(16, 32), dropout=0.5):
    """Strided 3x3 conv, dilated 3x3 conv, dropout, then a 1x1 prediction layer."""
    h1, h2 = hidden
    return NetConfig(
        layers=(
            Conv(3, h1, kernel=3, stride=2, padding=1),
            ReLU(),
            Conv(h1, h2, kernel=3, padding=2, dilation=2),
            ReLU(),
            Dropout(dropout),
            Conv(h2, classes, kernel=1),
        ),
        classes=classes,
        output_stride=2,
    )


def init_params(config, rng_seed=0):
    """He-normal hidden convs, N(0, 0.1^2) prediction layer, zero biases."""
    rng = np.random.default_rng(rng_seed)
    params = {}
    convs = [(i, l) for i, l in enumerate(config.layers) if isinstance(l, Conv)]
    for pos, (i, layer) in enumerate(convs):
        shape = (layer.kernel, layer.kernel, layer.in_channels, layer.out_channels)
        if pos == len(convs) - 1:
            std = 0.1
        else:
            std = np.sqrt(2.0 / (layer.kernel * layer.kernel * layer.in_channels))
        params[f"conv{i}.W"] = rng.normal(0.0, std, size=shape)
        params[f"conv{i}.b"] = np.zeros(layer.out_channels)
    return params


def _offsets(layer):
    d = layer.dilation
    return [(a * d, b * d) for a in range(layer.kernel) for b in range(layer.kernel)]


def conv_forward(x, W, b, layer):
    B, H, Wd, C = x.shape
    p, s = layer.padding, layer.stride
    ho, wo = layer.out_size(H), layer.out_size(Wd)
    if ho < 1 or wo < 1:
        raise ValueError("input too small for conv layer")
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.empty((B, ho, wo, layer.kernel * layer.kernel, C))
    for t, (dy, dx) in enumerate(_offsets(layer)):
        cols[:, :, :, t, :] = xp[:, dy:dy + s * (ho - 1) + 1:s, dx:dx + s * (wo - 1) + 1:s, :]
    cols = cols.reshape(B, ho, wo, -1)
    out = cols @ W.reshape(-1, W.shape[-1]) + b
    return out, (cols, x.shape)


def conv_backward(dout, W, layer, cache):
    cols, in_shape = cache
    B, H, Wd, C = in_shape
    p, s = layer.padding, layer.stride
    ho, wo = dout.shape[1:3]
    cout = W.shape[-1]
    d2 = dout.reshape(-1, cout)
    dW = (cols.reshape(-1, cols.shape[-1]).T @ d2).reshape(W.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ W.reshape(-1, cout).T).reshape(B, ho, wo, layer.kernel * layer.kernel, C)
    dxp = np.zeros((B, H + 2 * p, Wd + 2 * p, C))
    for t, (dy, dx) in enumerate(_offsets(layer)):
        dxp[:, dy:dy + s * (ho - 1) + 1:s, dx:dx + s * (wo - 1) + 1:s, :] += dcols[:, :, :, t, :]
    dx = dxp[:, p:p + H, p:p + Wd, :]
    return dx, dW, db


@dataclass
class ForwardCache:
    layer_caches: list
    param_shapes: dict
    input_shape: tuple
    squeeze: bool = False
    consumed: bool = field(default=False)


def forward(params, image, train_mode=False, rng=None, config=None):
    """Scores for an ``(H, W, 3)`` image or a ``(B, H, W, 3)`` batch.

    Dropout is applied only when ``train_mode`` is set, using ``rng``.
    Returns ``(scores, cache)``.
    """
    if config is None:
        raise ValueError("forward needs the network config")
    x = np.asarray(image, dtype=np.float64)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4 or x.shape[3] != config.in_channels:
        raise ValueError(f"expected (B, H, W, {config.in_channels}) input, got {x.shape}")
    H, W = x.shape[1:3]
    s = config.output_stride
    if H % s or W % s:
        raise ValueError(f"input {H}x{W} not divisible by output stride {s}")
    if train_mode and rng is None:
        rng = np.random.default_rng()
    caches = []
    for i, layer in enumerate(config.layers):
        if isinstance(layer, Conv):
            x, c = conv_forward(x, params[f"conv{i}.W"], params[f"conv{i}.b"], layer)
        elif isinstance(layer, ReLU):
            c = x > 0
            x = x * c
        elif isinstance(layer, Dropout):
            if train_mode and layer.rate > 0:
                c = (rng.random(x.shape) >= layer.rate) / (1.0 - layer.rate)
                x = x * c
            else:
                c = None
        caches.append(c)
    if x.shape[1:3] != (H // s, W // s):
        raise ValueError(f"network output {x.shape[1:3]} is not input / {s}")
    cache = ForwardCache(caches, {k: v.shape for k, v in params.items()}, x.shape, squeeze)
    return (x[0] if squeeze else x), cache


def backward(params, cache, dL_dscores, config=None, return_input_grad=False):
    """Parameter gradients for upstream gradient ``dL_dscores``."""
    if config is None:
        raise ValueError("backward needs the network config")
    if cache.consumed:
        raise ValueError("stale forward cache: backward already ran on it")
    if {k: v.shape for k, v in params.items()} != cache.param_shapes:
        raise ValueError("forward cache does not match these parameters")
    g = np.asarray(dL_dscores, dtype=np.float64)
    if cache.squeeze:
        g = g[None]
    if g.shape != cache.input_shape:
        raise ValueError(f"upstream gradient {g.shape} does not match scores {cache.input_shape}")
    cache.consumed = True
    grads = {}
    for i in reversed(range(len(config.layers))):
        layer, c = config.layers[i], cache.layer_caches[i]
        if isinstance(layer, Conv):
            g, grads[f"conv{i}.W"], grads[f"conv{i}.b"] = conv_backward(g, params[f"conv{i}.W"], layer, c)
        elif isinstance(layer, ReLU):
            g = g * c
        elif isinstance(layer, Dropout) and c is not None:
            g = g * c
    if return_input_grad:
        return grads, (g[0] if cache.squeeze else g)
    return grads


def receptive_support(config, params, image_shape, out_yx):
    """Input locations that influence one output unit, via its input gradient."""
    x = np.random.default_rng(0).random((1, *image_shape, config.in_channels)) + 0.5
    # positive weights keep every ReLU open so the support is purely geometric
    pos = {k: np.abs(v) + 0.1 if k.endswith(".W") else np.ones_like(v) for k, v in params.items()}
    scores, cache = forward(pos, x, config=config)
    up = np.zeros_like(scores)
    up[0, out_yx[0], out_yx[1], 0] = 1.0
    _, gx = backward(pos, cache, up, config=config, return_input_grad=True)
    return np.abs(gx[0]).sum(axis=-1) > 0
