"""Seeding, expansion and constrain-to-boundary losses and their sum.

Each term returns ``(loss, grad)`` where ``grad`` is the gradient with respect
to the probability field.  ``field.softmax_backward`` chains it to scores.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .cues import UNLABELED
from .densecrf import mean_field
from .field import EPS_PROB, BACKGROUND, check_probs
from .pooling import gwrp_forward, gwrp_backward

TERMS = ("seed", "expand", "constrain")


def parse_terms(terms):
    """Normalise a term selection (iterable or comma string) to a frozenset."""
    if isinstance(terms, str):
        terms = [t.strip() for t in terms.split(",") if t.strip()]
    terms = frozenset(terms)
    unknown = terms - set(TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    return terms


def _field(f, strict):
    if strict:
        return check_probs(f)
    # finite-difference probes step off the simplex; only shape and finiteness matter then
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or f.shape[2] < 2 or not np.all(np.isfinite(f)) or np.any(f <= 0):
        raise ValueError("expected a finite positive (H, W, K>=2) field")
    return f


def seeding_loss(f, cues, strict=True):
    """Mean negative log-probability of the cued class over all cue locations.

    Background cues count like any other class.  An empty cue mask gives a
    zero loss and gradient.  ``strict=False`` skips the sum-to-one check.
    """
    f = _field(f, strict)
    cues = np.asarray(cues)
    if cues.shape != f.shape[:2]:
        raise ValueError(f"cue mask {cues.shape} does not match field {f.shape[:2]}")
    k = f.shape[2]
    grad = np.zeros_like(f)
    labelled = cues != UNLABELED
    count = int(labelled.sum())
    if count == 0:
        return 0.0, grad
    rows, cols = np.nonzero(labelled)
    cls = cues[rows, cols].astype(np.int64)
    if cls.max() >= k:
        raise ValueError(f"cue class {cls.max()} >= number of classes {k}")
    p = f[rows, cols, cls]
    loss = -np.log(p).sum() / count
    grad[rows, cols, cls] = -1.0 / (count * p)
    return float(loss), grad


def _log_clamped(x):
    # log(max(x, eps)) and its derivative, which vanishes where the clamp bites
    if x > EPS_PROB:
        return np.log(x), 1.0 / x
    return np.log(EPS_PROB), 0.0


def expansion_loss(f, labels, decay, strict=True):
    """Image-level loss on GWRP-pooled class scores.

    Present classes pool with ``decay.d_plus`` and are pushed up, absent
    foreground classes pool with ``decay.d_minus`` and are pushed down, and
    background pools with ``decay.d_bg``.  Empty groups are skipped.
    """
    f = _field(f, strict)
    k = f.shape[2]
    present = sorted(set(int(c) for c in labels))
    if BACKGROUND in present:
        raise ValueError("label set must not contain the background class")
    if present and (present[0] < 1 or present[-1] >= k):
        raise ValueError(f"label ids {present} out of range for {k} classes")
    absent = [c for c in range(1, k) if c not in present]
    loss = 0.0
    grad = np.zeros_like(f)

    for c in present:
        g, order = gwrp_forward(f, c, decay.d_plus)
        lg, dlg = _log_clamped(g)
        loss -= lg / len(present)
        grad += gwrp_backward(order, decay.d_plus, -dlg / len(present))
    for c in absent:
        g, order = gwrp_forward(f, c, decay.d_minus)
        lg, dlg = _log_clamped(1.0 - g)
        loss -= lg / len(absent)
        grad += gwrp_backward(order, decay.d_minus, dlg / len(absent))
    g, order = gwrp_forward(f, BACKGROUND, decay.d_bg)
    lg, dlg = _log_clamped(g)
    loss -= lg
    grad += gwrp_backward(order, decay.d_bg, -dlg)
    return float(loss), grad


def kl_to_fixed(q, f):
    """Mean KL(q || f) per location, and its gradient in ``f`` with ``q`` held fixed."""
    n = f.shape[0] * f.shape[1]
    loss = float(np.sum(q * (np.log(q) - np.log(f))) / n)
    return loss, -q / (n * f)


def constrain_loss(image, f, config, kernel=None):
    """Mean KL divergence from the CRF marginals to the network output.

    The CRF output is treated as a constant target in the backward pass.
    ``image`` must already be at the field's resolution.
    """
    f = check_probs(f)
    image = np.asarray(image)
    if image.shape[:2] != f.shape[:2]:
        raise ValueError(f"image {image.shape[:2]} does not match field {f.shape[:2]}")
    q = mean_field(image, f, config, kernel=kernel)
    return kl_to_fixed(q, f)


@dataclass
class LossReport:
    seed_loss: float = 0.0
    expand_loss: float = 0.0
    constrain_loss: float = 0.0
    total: float = 0.0
    grad_probs: np.ndarray = None
    terms: frozenset = dc_field(default_factory=lambda: frozenset(TERMS))


def sec_loss(image, f, labels, cues, decay, crf_config, terms=TERMS, kernel=None):
    """Unweighted sum of the selected loss terms.

    Inactive terms are not evaluated and contribute exactly zero.
    """
    terms = parse_terms(terms)
    f = check_probs(f)
    report = LossReport(grad_probs=np.zeros_like(f), terms=terms)
    if "seed" in terms:
        report.seed_loss, g = seeding_loss(f, cues)
        report.grad_probs += g
    if "expand" in terms:
        report.expand_loss, g = expansion_loss(f, labels, decay)
        report.grad_probs += g
    if "constrain" in terms:
        report.constrain_loss, g = constrain_loss(image, f, crf_config, kernel=kernel)
        report.grad_probs += g
    report.total = report.seed_loss + report.expand_loss + report.constrain_loss
    return report
