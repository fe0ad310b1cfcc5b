"""Central finite-difference checks for every hand-written backward pass.

Each check draws ``instances`` random problems at generic points (no rank
ties, no ReLU kinks within reach of the step) and reports the worst relative
error ``max|analytic - numeric| / max(|analytic|, |numeric|)``, taken over the
whole gradient array so tiny entries do not blow up the ratio.
"""

from dataclasses import dataclass

import numpy as np

from . import field, losses, network, pooling
from .cues import UNLABELED
from .densecrf import CrfConfig, mean_field
from .network import Conv, Dropout, NetConfig, ReLU

H = 1e-5
LOSS_TOL = 1e-5
LAYER_TOL = 1e-4
POOLING_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

    def line(self):
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<22} n={self.instances:<3} max rel err {self.max_rel_error:.2e} (tol {self.tolerance:.0e})"


def numeric_grad(fn, x, h=H):
    """Central differences of scalar ``fn`` at ``x`` (perturbed in place, then restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = fn(x)
        x[idx] = old - h
        down = fn(x)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


def _generic_probs(rng, shape, min_gap=1e-3):
    # keep every class column free of near-ties so rank orders survive the step
    while True:
        f = field.softmax(rng.normal(size=shape))
        cols = np.sort(f.reshape(-1, shape[-1]), axis=0)
        if shape[0] * shape[1] == 1 or np.min(np.diff(cols, axis=0)) > min_gap:
            return f


def _random_cues(rng, shape, k):
    cues = rng.integers(0, k, size=shape).astype(np.uint8)
    cues[rng.random(shape) < 0.5] = UNLABELED
    return cues


def _run(name, tol, instances, rng, one):
    worst = 0.0
    for _ in range(instances):
        worst = max(worst, one(rng))
    return CheckResult(name, instances, worst, tol)


# ---- core field / pooling -------------------------------------------------

def check_softmax(instances=20, rng=None):
    rng = rng or np.random.default_rng(0)

    def one(rng):
        s = rng.normal(size=(3, 4, 5))
        up = rng.normal(size=s.shape)
        analytic = field.softmax_backward(field.softmax(s), up)
        numeric = numeric_grad(lambda x: float(np.sum(up * field.softmax(x))), s)
        return rel_error(analytic, numeric)

    return _run("softmax", LOSS_TOL, instances, rng, one)


def check_pooling(instances=20, rng=None):
    rng = rng or np.random.default_rng(1)

    def one(rng):
        f = _generic_probs(rng, (4, 5, 3))
        c = int(rng.integers(3))
        d = float(rng.uniform(0.0, 1.0))
        _, order = pooling.gwrp_forward(f, c, d)
        analytic = pooling.gwrp_backward(order, d, 1.0)
        numeric = numeric_grad(lambda x: pooling.gwrp_forward(x, c, d)[0], f)
        return rel_error(analytic, numeric)

    return _run("gwrp", POOLING_TOL, instances, rng, one)


# ---- losses -------------------------------------------------------------

_DECAY = pooling.DecayParams(d_plus=0.9, d_minus=0.0, d_bg=0.97)


def check_seeding(instances=20, rng=None):
    rng = rng or np.random.default_rng(2)

    def one(rng):
        f = _generic_probs(rng, (6, 6, 4))
        cues = _random_cues(rng, (6, 6), 4)
        analytic = losses.seeding_loss(f, cues)[1]
        numeric = numeric_grad(lambda x: losses.seeding_loss(x, cues, strict=False)[0], f)
        return rel_error(analytic, numeric)

    return _run("seeding loss", LOSS_TOL, instances, rng, one)


def check_expansion(instances=20, rng=None):
    rng = rng or np.random.default_rng(3)

    def one(rng):
        f = _generic_probs(rng, (6, 6, 4))
        labels = set(rng.choice([1, 2, 3], size=int(rng.integers(0, 4)), replace=False).tolist())
        analytic = losses.expansion_loss(f, labels, _DECAY)[1]
        numeric = numeric_grad(lambda x: losses.expansion_loss(x, labels, _DECAY, strict=False)[0], f)
        return rel_error(analytic, numeric)

    return _run("expansion loss", LOSS_TOL, instances, rng, one)


def check_constrain(instances=20, rng=None):
    """Against the KL with the CRF target frozen at the evaluation point."""
    rng = rng or np.random.default_rng(4)
    crf = CrfConfig(spatial_scale=4.0)

    def one(rng):
        f = _generic_probs(rng, (5, 5, 3))
        image = rng.random((5, 5, 3))
        q = mean_field(image, f, crf)
        analytic = losses.constrain_loss(image, f, crf)[1]
        numeric = numeric_grad(lambda x: losses.kl_to_fixed(q, x)[0], f)
        return rel_error(analytic, numeric)

    return _run("constrain loss", LOSS_TOL, instances, rng, one)


# ---- network --------------------------------------------------------------

def _net_check(config, x, rng, train_mode=False, min_preact=1e-3):
    """Compare parameter and input gradients of ``sum(up * scores)``."""
    while True:
        params = network.init_params(config, int(rng.integers(2**31)))
        for k in params:
            if k.endswith(".b"):
                params[k] = rng.normal(0, 0.1, size=params[k].shape)
        if not any(isinstance(l, ReLU) for l in config.layers) or _relu_clear(params, x, config, min_preact):
            break
    mask_seed = int(rng.integers(2**31))

    def scores(p, inp):
        return network.forward(p, inp, train_mode=train_mode, rng=np.random.default_rng(mask_seed),
                               config=config)[0]

    out = scores(params, x)
    up = rng.normal(size=out.shape)
    _, cache = network.forward(params, x, train_mode=train_mode, rng=np.random.default_rng(mask_seed),
                               config=config)
    grads, gx = network.backward(params, cache, up, config=config, return_input_grad=True)
    worst = rel_error(gx, numeric_grad(lambda v: float(np.sum(up * scores(params, v))), x))
    for k in params:
        def loss_k(v, k=k):
            p = dict(params)
            p[k] = v
            return float(np.sum(up * scores(p, x)))
        worst = max(worst, rel_error(grads[k], numeric_grad(loss_k, params[k].copy())))
    return worst


def _relu_clear(params, x, config, min_preact):
    # every pre-activation feeding a ReLU must sit well away from the kink
    h = np.asarray(x, dtype=np.float64)[None]
    for i, layer in enumerate(config.layers):
        if isinstance(layer, Conv):
            h, _ = network.conv_forward(h, params[f"conv{i}.W"], params[f"conv{i}.b"], layer)
        elif isinstance(layer, ReLU):
            if np.min(np.abs(h)) < min_preact:
                return False
            h = np.maximum(h, 0)
    return True


_CONV_CASES = {
    "conv 3x3 stride 2": (Conv(2, 3, kernel=3, stride=2, padding=1), 2, 6),
    "conv 3x3 dilation 2": (Conv(2, 3, kernel=3, padding=2, dilation=2), 1, 5),
    "conv 1x1": (Conv(2, 3, kernel=1), 1, 4),
}


def check_conv(instances=20, rng=None):
    results = []
    for name, (layer, stride, size) in _CONV_CASES.items():
        cfg = NetConfig(layers=(layer,), classes=layer.out_channels, output_stride=stride,
                        in_channels=layer.in_channels)
        r = rng or np.random.default_rng(5)
        results.append(_run(name, LAYER_TOL, instances, r,
                            lambda r: _net_check(cfg, r.normal(size=(size, size, 2)), r)))
    return results


def check_relu(instances=20, rng=None):
    rng = rng or np.random.default_rng(6)
    cfg = NetConfig(layers=(Conv(2, 4, kernel=1), ReLU(), Conv(4, 3, kernel=1)), classes=3,
                    output_stride=1, in_channels=2)
    return _run("relu", LAYER_TOL, instances, rng, lambda r: _net_check(cfg, r.normal(size=(4, 4, 2)), r))


def check_dropout(instances=20, rng=None):
    """Dropout in training mode with its mask held fixed across evaluations."""
    rng = rng or np.random.default_rng(7)
    cfg = NetConfig(layers=(Conv(2, 4, kernel=1), Dropout(0.5), Conv(4, 3, kernel=1)), classes=3,
                    output_stride=1, in_channels=2)
    return _run("dropout (fixed mask)", LAYER_TOL, instances, rng,
                lambda r: _net_check(cfg, r.normal(size=(4, 4, 2)), r, train_mode=True))


def composed_config(classes=3):
    return NetConfig(layers=(Conv(3, 4, kernel=3, stride=2, padding=1), ReLU(), Conv(4, classes, kernel=1)),
                     classes=classes, output_stride=2)


def check_composed(instances=20, rng=None):
    """Seeding + expansion + fixed-target KL through softmax and a 2-layer net on 8x8 images."""
    rng = rng or np.random.default_rng(8)
    cfg = composed_config()
    crf = CrfConfig(spatial_scale=4.0)

    def total(params, image, cues, labels, q):
        f = field.softmax(network.forward(params, image, config=cfg)[0])
        return (losses.seeding_loss(f, cues, strict=False)[0]
                + losses.expansion_loss(f, labels, _DECAY, strict=False)[0]
                + losses.kl_to_fixed(q, f)[0])

    def one(rng):
        while True:
            image = rng.random((8, 8, 3))
            params = network.init_params(cfg, int(rng.integers(2**31)))
            params["conv2.W"] *= 10.0   # spread the output away from uniform
            params["conv0.b"] = rng.normal(0, 0.1, size=4)
            scores, cache = network.forward(params, image, config=cfg)
            f = field.softmax(scores)
            cols = np.sort(f.reshape(-1, 3), axis=0)
            if np.min(np.diff(cols, axis=0)) > 1e-4 and _relu_clear(params, image, cfg, 1e-3):
                break
        cues = _random_cues(rng, (4, 4), 3)
        labels = {int(rng.integers(1, 3))}
        small = field.resize_field(image, 4, 4)
        q = mean_field(small, f, crf)
        g = (losses.seeding_loss(f, cues)[1] + losses.expansion_loss(f, labels, _DECAY)[1]
             + losses.constrain_loss(small, f, crf)[1])
        grads = network.backward(params, cache, field.softmax_backward(f, g), config=cfg)
        worst = 0.0
        for k in params:
            def loss_k(v, k=k):
                p = dict(params)
                p[k] = v
                return total(p, image, cues, labels, q)
            worst = max(worst, rel_error(grads[k], numeric_grad(loss_k, params[k].copy())))
        return worst

    return _run("network + loss", LAYER_TOL, instances, rng, one)


SUITES = {
    "pooling": (check_pooling,),
    "losses": (check_softmax, check_seeding, check_expansion, check_constrain),
    "network": (check_conv, check_relu, check_dropout, check_composed),
}


def run(module="all", instances=20, verbose=False):
    """Run the selected suites; returns a flat list of ``CheckResult``."""
    if module != "all" and module not in SUITES:
        raise ValueError(f"unknown module {module!r}; choose from all, {', '.join(SUITES)}")
    names = list(SUITES) if module == "all" else [module]
    results = []
    for name in names:
        for check in SUITES[name]:
            out = check(instances)
            out = out if isinstance(out, list) else [out]
            for r in out:
                if verbose:
                    print(r.line(), flush=True)
            results.extend(out)
    return results
