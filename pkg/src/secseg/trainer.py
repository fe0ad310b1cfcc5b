"""Mini-batch momentum SGD on the composite loss."""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .densecrf import CrfConfig, pairwise_kernel
from .field import resize_field, softmax, softmax_backward
from .losses import TERMS, parse_terms, sec_loss
from .network import backward, forward, init_params
from .pooling import DecayParams

POOLING_MODES = ("gmp", "gap", "gwrp")


@dataclass(frozen=True)
class TrainSample:
    """What the trainer may see: image, image-level labels and cues. No masks."""

    image: np.ndarray
    labels: frozenset
    cues: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 8
    lr0: float = 0.01
    lr_drop_factor: float = 0.1
    lr_drop_every: int = 1200
    weight_decay: float = 5e-4
    momentum: float = 0.9
    rng_seed: int = 0
    terms: frozenset = frozenset(TERMS)
    pooling: str = "gwrp"
    decay: DecayParams = None
    crf: CrfConfig = field(default_factory=lambda: CrfConfig(spatial_scale=12.0))

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1 or self.lr_drop_every < 1:
            raise ValueError("iteration and batch counts must be positive")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")
        object.__setattr__(self, "terms", parse_terms(self.terms))


FULL_SCHEDULE = dict(iterations=8000, batch_size=15, lr0=0.001, lr_drop_factor=0.1,
                      lr_drop_every=2000, weight_decay=0.0005, momentum=0.9)


class NumericalAbort(RuntimeError):
    def __init__(self, record):
        super().__init__(f"non-finite loss at iteration {record['iteration']}: {record}")
        self.record = record


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    checkpoint: str = None

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def lr_at(config, iteration):
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return config.lr0 * config.lr_drop_factor ** (iteration // config.lr_drop_every)


def effective_decay(config, n):
    """Decay triple after applying the present-class pooling mode."""
    if config.decay is not None:
        decay = config.decay
    elif n < 2:
        # a single location pools to itself whatever the decay
        decay = DecayParams(d_plus=1.0, d_minus=0.0, d_bg=1.0)
    else:
        decay = DecayParams.for_resolution(n)
    if config.pooling == "gmp":
        return replace(decay, d_plus=0.0)
    if config.pooling == "gap":
        return replace(decay, d_plus=1.0)
    return decay


def _batches(n, batch_size, rng):
    # epoch-wise shuffles without replacement, concatenated as needed
    buf = []
    while True:
        while len(buf) < batch_size:
            buf.extend(rng.permutation(n).tolist())
        yield buf[:batch_size]
        buf = buf[batch_size:]


class _Prepared:
    """Per-sample constrain-term inputs at mask resolution, computed once."""

    def __init__(self, dataset, mask_hw, crf_config, need_kernel):
        self.small = []
        self.cues = []
        self.kernels = []
        self.labels = [frozenset(s.labels) for s in dataset]
        h, w = mask_hw
        for s in dataset:
            small = resize_field(s.image, h, w, mode="bilinear")
            cues = np.asarray(s.cues)
            if cues.shape != (h, w):
                cues = resize_field(cues, h, w, mode="nearest")
            self.small.append(small)
            self.cues.append(cues)
            self.kernels.append(pairwise_kernel(small, crf_config) if need_kernel else None)


def batch_loss(params, net_config, images, batch, prepared, decay, config, train_mode, rng):
    """Mean loss terms and score-gradient over one batch."""
    scores, cache = forward(params, images, train_mode=train_mode, rng=rng, config=net_config)
    B = len(batch)
    dscores = np.empty_like(scores)
    sums = dict.fromkeys(("seed", "expand", "constrain", "total"), 0.0)
    if not np.all(np.isfinite(scores)):
        # diverged parameters; the caller turns this into a NumericalAbort
        return dict.fromkeys(sums, float("nan")), None, cache
    for b, idx in enumerate(batch):
        probs = softmax(scores[b])
        rep = sec_loss(prepared.small[idx], probs, prepared.labels[idx], prepared.cues[idx],
                       decay, config.crf, config.terms, kernel=prepared.kernels[idx])
        sums["seed"] += rep.seed_loss
        sums["expand"] += rep.expand_loss
        sums["constrain"] += rep.constrain_loss
        sums["total"] += rep.total
        dscores[b] = softmax_backward(probs, rep.grad_probs) / B
    return {k: v / B for k, v in sums.items()}, dscores, cache


def train(dataset, net_config, config, callback=None, params=None):
    """Fit network parameters on ``dataset`` (a sequence of ``TrainSample``).

    ``callback(iteration, params, batch)`` runs before each update.
    Returns ``(params, TrainLog)``.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    for s in dataset:
        if not isinstance(s, TrainSample):
            raise TypeError("training data must be TrainSample(image, labels, cues)")
    H, W = dataset[0].image.shape[:2]
    st = net_config.output_stride
    mask_hw = (H // st, W // st)
    decay = effective_decay(config, mask_hw[0] * mask_hw[1])
    prepared = _Prepared(dataset, mask_hw, config.crf, "constrain" in config.terms)
    images = np.stack([np.asarray(s.image, dtype=np.float64) for s in dataset])

    seeds = np.random.SeedSequence(config.rng_seed).spawn(2)
    sample_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    if params is None:
        params = init_params(net_config, config.rng_seed)
    else:
        params = {k: v.copy() for k, v in params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    log = TrainLog()
    batches = _batches(len(dataset), min(config.batch_size, len(dataset)), sample_rng)

    for it in range(config.iterations):
        batch = next(batches)
        lr = lr_at(config, it)
        losses, dscores, cache = batch_loss(params, net_config, images[batch], batch, prepared,
                                            decay, config, True, dropout_rng)
        record = {"iteration": it, "lr": lr, **losses}
        if not all(math.isfinite(v) for v in losses.values()):
            raise NumericalAbort(record)
        log.records.append(record)
        if callback is not None:
            callback(it, params, batch)
        grads = backward(params, cache, dscores, config=net_config)
        for k in params:
            g = grads[k] + config.weight_decay * params[k]
            velocity[k] = config.momentum * velocity[k] + lr * g
            params[k] = params[k] - velocity[k]
    return params, log
