"""Dense per-location fields and the elementary operations on them.

Fields are plain float64 numpy arrays laid out ``(height, width, classes)``.
The flat location index ``u`` is row-major over ``(height, width)`` and the
background class is id 0.  Masks are integer arrays ``(height, width)``.
"""

import numpy as np

EPS_PROB = 1e-8
BACKGROUND = 0


def check_scores(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 3:
        raise ValueError(f"score field must be (H, W, K), got shape {scores.shape}")
    if scores.shape[2] < 2:
        raise ValueError("score field needs at least two classes")
    if scores.shape[0] < 1 or scores.shape[1] < 1:
        raise ValueError("score field must have at least one location")
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite scores")
    return scores


def check_probs(probs, atol=1e-9):
    """Validate a probability field and return it as float64.

    Raises ``ValueError`` if any location fails to sum to one within ``atol``
    or an entry falls below the clamp floor.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[2] < 2:
        raise ValueError(f"probability field must be (H, W, K>=2), got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise ValueError("non-finite probabilities")
    if np.any(probs < EPS_PROB * (1 - 1e-6)) or np.any(probs > 1.0 + atol):
        raise ValueError("probabilities outside [EPS_PROB, 1]")
    if np.max(np.abs(probs.sum(axis=2) - 1.0)) > atol:
        raise ValueError("probabilities do not sum to one per location")
    return probs


def check_image(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("non-finite image values")
    return image


def clamp_probs(probs):
    """Clamp into ``[EPS_PROB, 1]`` and renormalise each location."""
    p = np.clip(probs, EPS_PROB, 1.0)
    return p / p.sum(axis=-1, keepdims=True)


def softmax(scores):
    """Per-location softmax over the class axis, clamped away from zero."""
    scores = check_scores(scores)
    z = scores - scores.max(axis=2, keepdims=True)
    e = np.exp(z)
    return clamp_probs(e / e.sum(axis=2, keepdims=True))


def softmax_backward(probs, dL_dprobs):
    """Chain ``dL/dprobs`` through the softmax Jacobian to ``dL/dscores``."""
    probs = np.asarray(probs, dtype=np.float64)
    g = np.asarray(dL_dprobs, dtype=np.float64)
    if probs.shape != g.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs grad {g.shape}")
    return probs * (g - np.sum(probs * g, axis=-1, keepdims=True))


def _source_coords(n_in, n_out):
    # Corner-aligned sampling: output pixel 0 and n_out-1 land exactly on input 0 and n_in-1.
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_field(field, new_h, new_w, mode="bilinear", normalize=False):
    """Resample a ``(H, W)`` or ``(H, W, C)`` field to ``(new_h, new_w)``.

    ``mode="nearest"`` is meant for label masks, ``"bilinear"`` for images and
    probability fields.  With ``normalize=True`` every location is rescaled to
    sum to one after interpolation, which probability fields want.
    """
    if new_h < 1 or new_w < 1:
        raise ValueError("target dimensions must be >= 1")
    field = np.asarray(field)
    h, w = field.shape[:2]
    if (h, w) == (new_h, new_w):
        return field.copy()
    ys = _source_coords(h, new_h)
    xs = _source_coords(w, new_w)
    if mode == "nearest":
        iy = np.floor(ys + 0.5).astype(int)
        ix = np.floor(xs + 0.5).astype(int)
        return field[iy][:, ix].copy()
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")

    f = field.astype(np.float64)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    if f.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    top = f[y0][:, x0] * (1 - wx) + f[y0][:, x1] * wx
    bottom = f[y1][:, x0] * (1 - wx) + f[y1][:, x1] * wx
    out = top * (1 - wy) + bottom * wy
    if normalize:
        out = out / out.sum(axis=-1, keepdims=True)
    return out


def argmax_mask(probs):
    """Label mask from a probability field; ties go to the smallest class id."""
    return np.argmax(probs, axis=-1).astype(np.int64)
