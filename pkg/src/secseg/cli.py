"""Command-line entry point: ``secseg <command> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 numerical abort during training.
"""

import argparse
import contextlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradcheck
from .config import resolve
from .cues import UNLABELED, make_cues
from .datagen import export, generate, load
from .experiments import ablation, pooling_comparison
from .evaluation import aggregate, evaluate
from .formats import FormatError, read_json, read_pgm, read_ppm, read_tensor, write_json, write_pgm, write_tensor
from .inference import predict_mask
from .losses import parse_terms
from .network import Conv, NetConfig
from .trainer import NumericalAbort, TrainSample, train

log = logging.getLogger("secseg")

OK, VERIFY_FAILED, USAGE, ABORT = 0, 1, 2, 3
CKPT_FORMAT = "secseg-checkpoint"


class UsageError(Exception):
    pass


def _config(path):
    if path is None:
        return resolve({})
    return resolve(read_json(path))


@contextlib.contextmanager
def _threads(deterministic):
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


def _out_dir(path):
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create output directory {p}: {e}") from None
    return p


# ---- data ------------------------------------------------------------------

def cmd_gen_data(args):
    run = _config(args.config)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    out = _out_dir(args.out)
    try:
        manifest = export(generate(run.synth, args.count), out)
    except OSError as e:
        raise UsageError(f"cannot write dataset to {out}: {e}") from None
    print(f"wrote {manifest['count']} samples to {out}")
    return OK


def _cue_params(args, run):
    fg = run.cues["fg_ratio"] if args.fg_ratio is None else args.fg_ratio
    bg = run.cues["bg_fraction"] if args.bg_fraction is None else args.bg_fraction
    if not 0 < fg < 1:
        raise UsageError("--fg-ratio must lie in (0, 1)")
    if not 0 < bg < 1:
        raise UsageError("--bg-fraction must lie in (0, 1)")
    return fg, bg, run.cues["median_window"]


def cmd_cues(args):
    run = _config(args.config)
    fg, bg, window = _cue_params(args, run)
    root = Path(args.data)
    manifest = read_json(root / "manifest.json")
    out = _out_dir(args.out)
    for entry in manifest["samples"]:
        labels = {int(c) for c in entry["labels"]}
        heat = {}
        for c in labels:
            rel = entry["heatmaps"].get(str(c))
            if rel is None:
                raise FormatError(root / "manifest.json", f"sample {entry['id']}: no heatmap for class {c}")
            heat[c] = read_tensor(root / rel).astype(np.float64)
        saliency = read_tensor(root / entry["saliency"]).astype(np.float64)
        write_pgm(out / f"{entry['id']}.pgm", make_cues(heat, saliency, fg, bg, window))
    write_json(out / "cues.json", {"fg_ratio": fg, "bg_fraction": bg, "median_window": window,
                                   "count": len(manifest["samples"])})
    print(f"wrote {len(manifest['samples'])} cue masks to {out}")
    return OK


def _load_split(data_dir, cue_dir):
    """Samples from ``data_dir`` paired with their cue masks from ``cue_dir``."""
    root = Path(data_dir)
    samples = load(root)
    ids = [e["id"] for e in read_json(root / "manifest.json")["samples"]]
    cues = []
    for i, s in zip(ids, samples):
        p = Path(cue_dir) / f"{i}.pgm"
        if not p.is_file():
            raise FormatError(p, "cue mask missing")
        c = read_pgm(p)
        if c.shape != s.gt_mask.shape:
            raise FormatError(p, f"cue mask {c.shape} does not match image {s.gt_mask.shape}")
        allowed = {0, UNLABELED, *s.labels}
        if not set(np.unique(c).tolist()) <= allowed:
            raise FormatError(p, "cue mask uses a class outside the image's label set")
        cues.append(c)
    return samples, cues


def _train_set(samples, cues):
    return [TrainSample(s.image, frozenset(s.labels), c) for s, c in zip(samples, cues)]


# ---- training and checkpoints ---------------------------------------------------

def _apply_overrides(run, args):
    train_cfg = run.train
    if getattr(args, "terms", None):
        train_cfg = replace(train_cfg, terms=parse_terms(args.terms))
    if getattr(args, "pooling", None):
        train_cfg = replace(train_cfg, pooling=args.pooling)
    if train_cfg.pooling != "gwrp" and train_cfg.decay is not None:
        log.warning("pooling %s overrides d_plus=%g from the config; the configured "
                    "present-class decay is ignored", train_cfg.pooling, train_cfg.decay.d_plus)
    return replace(run, train=train_cfg)


def save_checkpoint(directory, params, run, train_log):
    out = _out_dir(directory)
    (out / "params").mkdir(exist_ok=True)
    entries = {}
    for name in sorted(params):
        rel = f"params/{name}.sect"
        write_tensor(out / rel, params[name])
        entries[name] = {"file": rel, "shape": list(params[name].shape)}
    write_json(out / "manifest.json", {"format": CKPT_FORMAT, "version": 1,
                                       "net": run.net.to_dict(), "params": entries})
    write_json(out / "config.json", run.to_dict())
    (out / "train_log.jsonl").write_text(train_log.to_jsonl())


def load_checkpoint(directory):
    root = Path(directory)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise FormatError(mpath, "checkpoint manifest not found")
    manifest = read_json(mpath)
    if manifest.get("format") != CKPT_FORMAT:
        raise FormatError(mpath, "not a checkpoint manifest")
    net = NetConfig.from_dict(manifest["net"])
    params = {}
    for name, e in manifest["params"].items():
        a = read_tensor(root / e["file"]).astype(np.float64)
        if list(a.shape) != e["shape"]:
            raise FormatError(root / e["file"], f"shape {a.shape} differs from manifest {e['shape']}")
        params[name] = a
    expected = set()
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Conv):
            expected |= {f"conv{i}.W", f"conv{i}.b"}
            shape = (layer.kernel, layer.kernel, layer.in_channels, layer.out_channels)
            if f"conv{i}.W" in params and params[f"conv{i}.W"].shape != shape:
                raise FormatError(mpath, f"conv{i}.W has shape {params[f'conv{i}.W'].shape}, "
                                         f"architecture needs {shape}")
    if set(params) != expected:
        raise FormatError(mpath, "parameters do not match the architecture")
    run = resolve(read_json(root / "config.json")) if (root / "config.json").is_file() else None
    return net, params, run


def cmd_train(args):
    run = _apply_overrides(_config(args.config), args)
    samples, cues = _load_split(args.data, args.cues)
    with _threads(args.deterministic):
        try:
            params, train_log = train(_train_set(samples, cues), run.net, run.train)
        except NumericalAbort as e:
            print(f"numerical abort: {json.dumps(e.record, sort_keys=True)}", file=sys.stderr)
            return ABORT
    save_checkpoint(args.out, params, run, train_log)
    last = train_log.records[-1] if train_log.records else {}
    print(f"trained {len(train_log.records)} iterations; final loss {last.get('total', float('nan')):.4f}; "
          f"checkpoint in {args.out}")
    return OK


def cmd_infer(args):
    net, params, run = load_checkpoint(args.ckpt)
    crf = None
    if args.crf == "on":
        if args.config is not None:
            crf = _config(args.config).test_crf
        else:
            crf = run.test_crf if run is not None else resolve({}).test_crf
    image = read_ppm(args.image)
    with _threads(args.deterministic):
        mask = predict_mask(params, net, image, crf)
    write_pgm(args.out, mask)
    print(f"wrote {mask.shape[1]}x{mask.shape[0]} mask to {args.out}")
    return OK


# ---- evaluation and experiments --------------------------------------------------

def cmd_eval(args):
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"{d} is not a directory")
    preds = sorted(p.name for p in pred_dir.glob("*.pgm"))
    gts = sorted(p.name for p in gt_dir.glob("*.pgm"))
    if len(preds) != len(gts):
        raise UsageError(f"{len(preds)} predictions but {len(gts)} ground-truth masks")
    if preds != gts:
        missing = sorted(set(gts) - set(preds))
        raise UsageError(f"no prediction for {missing[0]}" if missing else "file names differ")
    if not preds:
        raise UsageError("no masks to evaluate")
    pairs = [(read_pgm(pred_dir / n), read_pgm(gt_dir / n)) for n in preds]
    k = args.classes or int(max(max(p.max(), g.max()) for p, g in pairs)) + 1
    counts = []
    for n, (p, g) in zip(preds, pairs):
        if p.shape != g.shape:
            raise UsageError(f"{n}: prediction {p.shape} and ground truth {g.shape} differ in size")
        counts.append(evaluate(p.astype(np.int64), g.astype(np.int64), k))
    report = aggregate(counts).to_dict()
    report["count"] = len(preds)
    write_json(args.out, report)
    print(f"mIoU {report['miou']:.4f} over {len(preds)} masks; fg fraction {report['fg_fraction']:.4f}")
    return OK


def _experiment_inputs(args):
    run = _config(args.config)
    samples, cues = _load_split(args.data, args.cues)
    n = int(run.experiment["train_count"])
    if n >= len(samples):
        raise UsageError(f"experiment.train_count={n} leaves no test samples out of {len(samples)}")
    test_crf = run.test_crf if run.experiment["eval_crf"] else None
    return run, _train_set(samples[:n], cues[:n]), samples[n:], test_crf


def _progress(cfg, report):
    print(f"  {cfg.pooling:<5} {','.join(sorted(cfg.terms)):<24} mIoU {report.miou:.4f} "
          f"fg {report.fg_fraction:.4f}", file=sys.stderr, flush=True)


def cmd_ablate(args):
    run, train_set, test, test_crf = _experiment_inputs(args)
    with _threads(args.deterministic):
        report = ablation(train_set, test, run.net, run.train, test_crf, progress=_progress)
    report["config"] = run.to_dict()
    write_json(args.out, report)
    for row in report["rows"]:
        print(f"{row['variant']:<16} mIoU {row['miou']:.4f}")
    return OK


def cmd_pooling_compare(args):
    run, train_set, test, test_crf = _experiment_inputs(args)
    with _threads(args.deterministic):
        report = pooling_comparison(train_set, test, run.net, run.train, test_crf, progress=_progress)
    report["config"] = run.to_dict()
    write_json(args.out, report)
    for row in report["rows"]:
        print(f"{row['pooling']:<5} fg {row['fg_fraction']:.4f} mIoU {row['miou']:.4f}")
    print(f"ground truth fg {report['ground_truth_fg_fraction']:.4f}")
    return OK


def cmd_gradcheck(args):
    results = gradcheck.run(args.module, instances=args.instances, verbose=True)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
        return VERIFY_FAILED
    print(f"all {len(results)} checks passed")
    return OK


# ---- parser ---------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="secseg", description="Weakly supervised segmentation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate the synthetic shapes dataset")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, required=True)

    sp = add("cues", cmd_cues, "derive localization cue masks from heatmaps and saliency")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--fg-ratio", type=float)
    sp.add_argument("--bg-fraction", type=float)

    sp = add("train", cmd_train, "train a segmentation network")
    for flag in ("--data", "--cues", "--out"):
        sp.add_argument(flag, required=True)
    sp.add_argument("--config")
    sp.add_argument("--terms", help="comma-separated subset of seed,expand,constrain")
    sp.add_argument("--pooling", choices=("gmp", "gap", "gwrp"))
    sp.add_argument("--deterministic", action="store_true", help="single-threaded numerics")

    sp = add("infer", cmd_infer, "predict a mask for one image")
    for flag in ("--ckpt", "--image", "--out"):
        sp.add_argument(flag, required=True)
    sp.add_argument("--crf", choices=("on", "off"), default="on")
    sp.add_argument("--config", help="take the test-time CRF settings from this config")
    sp.add_argument("--deterministic", action="store_true")

    sp = add("eval", cmd_eval, "score predicted masks against ground truth")
    for flag in ("--pred", "--gt", "--out"):
        sp.add_argument(flag, required=True)
    sp.add_argument("--classes", type=int, help="number of classes (default: inferred)")

    for name, fn, help_ in (("ablate", cmd_ablate, "loss-term ablation"),
                            ("pooling-compare", cmd_pooling_compare, "GMP / GWRP / GAP comparison")):
        sp = add(name, fn, help_)
        for flag in ("--data", "--cues", "--out"):
            sp.add_argument(flag, required=True)
        sp.add_argument("--config")
        sp.add_argument("--deterministic", action="store_true")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference gradient checks")
    sp.add_argument("--module", choices=("all", "pooling", "losses", "network"), default="all")
    sp.add_argument("--instances", type=int, default=20)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, OSError, ValueError, KeyError) as e:
        # ConfigError and FormatError are ValueErrors and land here too
        print(f"error: {e}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
