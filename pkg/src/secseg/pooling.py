"""Global pooling of a class score map into one image-level score.

Global weighted rank pooling (GWRP) sorts the scores of a class in
descending order and takes a geometrically weighted average with ratio
``d``.  ``d = 0`` reduces to max pooling and ``d = 1`` to average pooling.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DecayParams:
    """GWRP decay ratios for present classes, absent classes and background."""

    d_plus: float
    d_minus: float = 0.0
    d_bg: float = 1.0

    def __post_init__(self):
        for name in ("d_plus", "d_minus", "d_bg"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @classmethod
    def for_resolution(cls, n, present_top=0.1, bg_top=0.3, mass=0.5):
        """Decay triple from the top-fraction/mass-fraction rules of thumb."""
        return cls(
            d_plus=solve_decay(n, present_top, mass),
            d_minus=0.0,
            d_bg=solve_decay(n, bg_top, mass),
        )


@dataclass(frozen=True)
class RankOrder:
    """Descending rank order of one class's scores, as used by a forward pass."""

    cls: int
    indices: np.ndarray
    shape: tuple
    d: float


def _column(f, c):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError(f"expected an (H, W, K) field, got shape {f.shape}")
    if not 0 <= c < f.shape[2]:
        raise ValueError(f"class {c} out of range for {f.shape[2]} classes")
    col = f[:, :, c].ravel()
    if not np.all(np.isfinite(col)):
        raise ValueError("non-finite field values")
    return col


def rank_weights(n, d):
    """Normalised GWRP weights ``d**j / Z`` for ranks ``j = 0..n-1``.

    numpy evaluates ``0.0 ** 0`` as 1, so ``d = 0`` puts all weight on rank 0.
    """
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"decay {d} outside [0, 1]")
    w = np.power(float(d), np.arange(n, dtype=np.float64))
    return w / w.sum()


def rank_order(f, c):
    col = _column(f, c)
    # stable sort on the negated scores breaks ties by ascending location
    return np.argsort(-col, kind="stable")


def gwrp_forward(f, c, d):
    """GWRP score of class ``c``; returns ``(score, RankOrder)``."""
    col = _column(f, c)
    order = np.argsort(-col, kind="stable")
    w = rank_weights(col.size, d)
    score = float(np.dot(w, col[order]))
    return score, RankOrder(cls=c, indices=order, shape=np.shape(f), d=float(d))


def gwrp_backward(order, d, dL_dscore):
    """Gradient of ``dL_dscore * score`` w.r.t. the full field, ranks frozen."""
    if float(d) != order.d:
        raise ValueError(f"rank order was built with d={order.d}, not d={d}")
    h, w, k = order.shape
    n = h * w
    if order.indices.shape != (n,):
        raise ValueError("rank order does not match its recorded shape")
    grad = np.zeros(order.shape, dtype=np.float64)
    col = np.zeros(n)
    col[order.indices] = dL_dscore * rank_weights(n, d)
    grad[:, :, order.cls] = col.reshape(h, w)
    return grad


def gwrp(f, c, d):
    return gwrp_forward(f, c, d)[0]


def gmp(f, c):
    return float(np.max(_column(f, c)))


def gap(f, c):
    return float(np.mean(_column(f, c)))


def _top_mass(d, m, n):
    # share of the total weight carried by the top m of n ranks
    if d >= 1.0:
        return m / n
    if d <= 0.0:
        return 1.0
    ld = math.log(d)
    return math.expm1(m * ld) / math.expm1(n * ld)


def solve_decay(n, q, p, tol=1e-10, max_iter=200):
    """Decay ``d`` at which the top ``ceil(q*n)`` ranks hold fraction ``p`` of the weight.

    The top-mass function falls monotonically from 1 (``d=0``) to
    ``ceil(q*n)/n`` (``d=1``); bisection finds the crossing.  If ``p`` does not
    exceed the ``d=1`` value the answer is 1.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not (0.0 < q < 1.0 and 0.0 < p < 1.0):
        raise ValueError("q and p must lie in (0, 1)")
    if p < q:
        raise ValueError("infeasible mass fraction")
    m = math.ceil(q * n)
    if p <= _top_mass(1.0, m, n):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = _top_mass(mid, m, n) - p
        if abs(r) < tol:
            return mid
        if r > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
