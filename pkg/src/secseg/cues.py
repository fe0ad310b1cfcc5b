"""Weak-localization cues: heat maps and saliency turned into a sparse label mask.

Location sets are sorted arrays of flat row-major indices.  A cue mask is a
``uint8`` array holding a class id per labelled location and ``UNLABELED``
everywhere else.
"""

import warnings

import numpy as np
from scipy.ndimage import median_filter

UNLABELED = 255


def fg_cues(heatmap, threshold_ratio=0.2):
    """Locations whose heat is at least ``threshold_ratio`` of the map's maximum."""
    h = np.asarray(heatmap, dtype=np.float64)
    if not 0.0 < threshold_ratio < 1.0:
        raise ValueError("threshold_ratio must lie in (0, 1)")
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite heatmap")
    if np.any(h < 0):
        raise ValueError("heatmap has negative entries")
    top = h.max()
    if top <= 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(h.ravel() >= threshold_ratio * top)


def smooth_saliency(saliency, median_window=3):
    if median_window < 1 or median_window % 2 == 0:
        raise ValueError("median_window must be a positive odd integer")
    return median_filter(np.asarray(saliency, dtype=np.float64), size=median_window, mode="nearest")


def bg_cues(saliency, fraction=0.1, median_window=3):
    """The ``floor(fraction * n)`` least salient locations after median smoothing.

    Ties go to the lower location index.  If the count rounds down to zero an
    empty set is returned with a ``RuntimeWarning``.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    s = np.asarray(saliency, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite saliency")
    count = int(np.floor(fraction * s.size))
    if count < 1:
        warnings.warn(f"fraction {fraction} of {s.size} locations selects no background cues",
                      RuntimeWarning, stacklevel=2)
        return np.zeros(0, dtype=np.int64)
    smoothed = smooth_saliency(s, median_window).ravel()
    return np.sort(np.argsort(smoothed, kind="stable")[:count])


def combine_cues(fg, bg, shape):
    """Stack per-class foreground sets and a background set into one cue mask.

    Foreground classes with fewer cue locations win conflicts (equal sizes:
    lower class id).  Background only fills locations no foreground class took.
    """
    h, w = shape
    n = h * w
    flat = np.full(n, UNLABELED, dtype=np.uint8)
    for c in fg:
        if not 1 <= c < UNLABELED:
            raise ValueError(f"foreground class id {c} out of range")
    priority = sorted(fg, key=lambda c: (len(fg[c]), c))
    for c in priority:
        idx = np.asarray(fg[c], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError(f"cue locations for class {c} out of bounds")
        free = idx[flat[idx] == UNLABELED]
        flat[free] = c
    idx = np.asarray(bg, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError("background cue locations out of bounds")
    free = idx[flat[idx] == UNLABELED]
    flat[free] = 0
    return flat.reshape(h, w)


def make_cues(heatmaps, saliency, fg_ratio=0.2, bg_fraction=0.1, median_window=3):
    """Full cue pipeline for one image.

    ``heatmaps`` maps each present foreground class id to its heat map.
    """
    saliency = np.asarray(saliency)
    fg = {}
    for c, hm in heatmaps.items():
        if np.shape(hm) != saliency.shape:
            raise ValueError(f"heatmap for class {c} has shape {np.shape(hm)}, expected {saliency.shape}")
        fg[int(c)] = fg_cues(hm, fg_ratio)
    bg = bg_cues(saliency, bg_fraction, median_window)
    return combine_cues(fg, bg, saliency.shape)


def cue_sets(cues):
    """Map of class id to the flat locations it labels."""
    flat = np.asarray(cues).ravel()
    return {int(c): np.flatnonzero(flat == c) for c in np.unique(flat) if c != UNLABELED}
