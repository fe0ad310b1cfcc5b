"""Test-time prediction: coarse scores, upscale, optional CRF refinement."""

import numpy as np

from .densecrf import refine
from .field import argmax_mask, clamp_probs, resize_field, softmax
from .network import forward


def predict_probs(params, net_config, image):
    """Eval-mode class probabilities upscaled to the image resolution."""
    scores, _ = forward(params, image, train_mode=False, config=net_config)
    probs = softmax(scores)
    h, w = np.shape(image)[:2]
    return clamp_probs(resize_field(probs, h, w, mode="bilinear", normalize=True))


def predict_mask(params, net_config, image, crf_config=None):
    probs = predict_probs(params, net_config, image)
    if crf_config is None:
        return argmax_mask(probs)
    return refine(image, probs, crf_config)
