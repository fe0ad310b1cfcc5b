"""Loss-term ablation and pooling comparison on a train/test split."""

from dataclasses import replace

from .cues import make_cues
from .datagen import foreground_fraction
from .evaluation import aggregate, evaluate
from .inference import predict_mask
from .trainer import TrainSample, train

ABLATION_VARIANTS = (
    ("expand", ("expand",)),
    ("seed", ("seed",)),
    ("seed+expand", ("seed", "expand")),
    ("seed+constrain", ("seed", "constrain")),
    ("all", ("seed", "expand", "constrain")),
)

POOLING_VARIANTS = ("gmp", "gwrp", "gap")


def training_set(samples, fg_ratio=0.2, bg_fraction=0.1, cues=None):
    """Strip synthetic samples down to what the trainer is allowed to see."""
    out = []
    for i, s in enumerate(samples):
        c = cues[i] if cues is not None else make_cues(s.heatmaps, s.saliency, fg_ratio, bg_fraction)
        out.append(TrainSample(s.image, frozenset(s.labels), c))
    return out


def score(params, net_config, test_samples, crf_config):
    counts = [evaluate(predict_mask(params, net_config, s.image, crf_config), s.gt_mask, net_config.classes)
              for s in test_samples]
    return aggregate(counts)


def _run(train_set, test_samples, net_config, train_config, test_crf, progress):
    params, log = train(train_set, net_config, train_config)
    report = score(params, net_config, test_samples, test_crf)
    if progress:
        progress(train_config, report)
    return params, log, report


def ablation(train_set, test_samples, net_config, train_config, test_crf=None, progress=None):
    """Train one model per term combination from the same seed; one row each."""
    rows = []
    for name, terms in ABLATION_VARIANTS:
        cfg = replace(train_config, terms=frozenset(terms))
        _, log, report = _run(train_set, test_samples, net_config, cfg, test_crf, progress)
        rows.append({"variant": name, "terms": list(terms), "miou": report.miou,
                     "fg_fraction": report.fg_fraction,
                     "iou": report.to_dict()["iou"], "final_loss": log.records[-1]["total"] if log.records else None})
    return {"experiment": "ablation", "rows": rows}


def pooling_comparison(train_set, test_samples, net_config, train_config, test_crf=None, progress=None):
    """Train with GMP, GWRP and GAP for present classes; absent classes stay GMP."""
    rows = []
    for mode in POOLING_VARIANTS:
        cfg = replace(train_config, pooling=mode)
        _, _, report = _run(train_set, test_samples, net_config, cfg, test_crf, progress)
        rows.append({"pooling": mode, "miou": report.miou, "fg_fraction": report.fg_fraction})
    return {"experiment": "pooling", "rows": rows,
            "ground_truth_fg_fraction": foreground_fraction(test_samples)}
