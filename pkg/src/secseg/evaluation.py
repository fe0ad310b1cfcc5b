"""Segmentation metrics with dataset-level pooling of confusion counts."""

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalReport:
    iou: np.ndarray          # per class, NaN where undefined
    miou: float
    fg_fraction: float
    confusion: np.ndarray    # rows: ground truth, columns: prediction

    def to_dict(self):
        return {
            "iou": [None if np.isnan(v) else float(v) for v in self.iou],
            "miou": self.miou,
            "fg_fraction": self.fg_fraction,
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(pred, gt, classes):
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth sizes differ")
    if pred.size and (max(pred.max(), gt.max()) >= classes or min(pred.min(), gt.min()) < 0):
        raise ValueError(f"class ids must lie in [0, {classes})")
    return np.bincount(gt * classes + pred, minlength=classes * classes).reshape(classes, classes)


def evaluate(pred, gt, classes):
    """Confusion counts for one image."""
    if np.shape(pred) != np.shape(gt):
        raise ValueError(f"mask dimensions differ: {np.shape(pred)} vs {np.shape(gt)}")
    return confusion_matrix(pred, gt, classes)


def aggregate(counts):
    """Pool per-image confusion counts into an ``EvalReport``."""
    counts = list(counts)
    if not counts:
        raise ValueError("no counts to aggregate")
    conf = np.sum(counts, axis=0)
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    defined = ~np.isnan(iou)
    miou = float(iou[defined].mean()) if defined.any() else float("nan")
    total = conf.sum()
    fg = float(conf[:, 1:].sum() / total) if total else 0.0
    return EvalReport(iou=iou, miou=miou, fg_fraction=fg, confusion=conf)


def fg_fraction(mask):
    m = np.asarray(mask)
    return float((m != 0).sum() / m.size)
