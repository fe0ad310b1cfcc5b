"""Fully connected CRF with Gaussian pairwise kernels and Potts compatibility.

Mean-field messages are computed by brute force over all location pairs,
which is exact and cheap enough for masks of a few thousand locations.
"""

from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial.distance import cdist

from .field import check_image, check_probs, softmax, argmax_mask


@dataclass(frozen=True)
class CrfConfig:
    iterations: int = 5
    appearance_weight: float = 10.0
    appearance_spatial_sigma: float = 80.0
    appearance_color_sigma: float = 13.0
    smoothness_weight: float = 3.0
    smoothness_sigma: float = 3.0
    spatial_scale: float = 1.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.appearance_weight < 0 or self.smoothness_weight < 0:
            raise ValueError("kernel weights must be >= 0")
        for s in (self.appearance_spatial_sigma, self.appearance_color_sigma, self.smoothness_sigma):
            if s <= 0:
                raise ValueError("kernel sigmas must be > 0")
        if self.spatial_scale <= 0:
            raise ValueError("spatial_scale must be > 0")

    def as_dict(self):
        return asdict(self)


def pairwise_kernel(image, config):
    """Dense ``(n, n)`` kernel matrix for an ``(H, W, 3)`` image in [0, 1].

    Spatial distances are in pixels times ``spatial_scale``; colour distances
    use the 0..255 scale.  The diagonal is zero.
    """
    image = check_image(image)
    h, w, _ = image.shape
    yy, xx = np.mgrid[0:h, 0:w]
    pos = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    col = image.reshape(-1, 3) * 255.0
    d_pos = cdist(pos, pos, "sqeuclidean") * config.spatial_scale ** 2
    kernel = np.zeros_like(d_pos)
    if config.appearance_weight > 0:
        d_col = cdist(col, col, "sqeuclidean")
        kernel += config.appearance_weight * np.exp(
            -d_pos / (2 * config.appearance_spatial_sigma ** 2)
            - d_col / (2 * config.appearance_color_sigma ** 2))
    if config.smoothness_weight > 0:
        kernel += config.smoothness_weight * np.exp(-d_pos / (2 * config.smoothness_sigma ** 2))
    np.fill_diagonal(kernel, 0.0)
    return kernel


def mean_field(image, unary_probs, config, kernel=None, trace=None):
    """Approximate CRF marginals by synchronous mean-field updates.

    Starts from ``unary_probs`` and runs ``config.iterations`` updates.
    ``kernel`` may be passed in when it has been computed already for this
    image and config.  If ``trace`` is a list, each iterate is appended to it.
    """
    image = check_image(image)
    unary = check_probs(unary_probs)
    h, w, k = unary.shape
    if image.shape[:2] != (h, w):
        raise ValueError(f"image {image.shape[:2]} and unary {(h, w)} dimensions differ")
    q = unary.copy()
    if config.iterations == 0 or (config.appearance_weight == 0 and config.smoothness_weight == 0):
        return q
    if kernel is None:
        kernel = pairwise_kernel(image, config)
    log_unary = np.log(unary).reshape(-1, k)
    qf = q.reshape(-1, k)
    for _ in range(config.iterations):
        messages = kernel @ qf
        # Potts penalty sum_{c' != c} m_c' equals total - m_c; the per-location
        # total cancels in the softmax, leaving +m_c.
        qf = softmax((log_unary + messages).reshape(h, w, k)).reshape(-1, k)
        if trace is not None:
            trace.append(qf.reshape(h, w, k).copy())
    return qf.reshape(h, w, k)


def refine(image, mask_probs, config, kernel=None):
    """Hard segmentation from the CRF marginals."""
    return argmax_mask(mean_field(image, mask_probs, config, kernel=kernel))
