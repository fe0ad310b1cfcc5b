import numpy as np

from secseg.cues import UNLABELED
from secseg.field import softmax


def central_diff(fn, x, h=1e-5):
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


def rel_error(a, b):
    """Largest entrywise error relative to the gradient's overall scale."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def generic_probs(rng, shape, min_gap=1e-3):
    """Random probability field with well separated values within each class."""
    while True:
        f = softmax(rng.normal(size=shape))
        cols = np.sort(f.reshape(-1, shape[2]), axis=0)
        if np.min(np.diff(cols, axis=0)) > min_gap:
            return f


def random_cues(rng, shape, classes, density=0.5):
    cues = rng.integers(0, classes, size=shape).astype(np.uint8)
    cues[rng.random(shape) > density] = UNLABELED
    return cues
