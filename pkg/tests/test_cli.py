import json
import logging

import numpy as np
import pytest

from secseg import cli, pooling
from secseg.cues import UNLABELED
from secseg.densecrf import CrfConfig, refine
from secseg.field import resize_field
from secseg.formats import read_pgm, read_ppm, write_pgm
from secseg.inference import predict_probs
from secseg.network import default_config

SMALL_NET = {"layers": default_config(4, hidden=(4, 4)).to_dict()["layers"]}


def write_config(path, **sections):
    path.write_text(json.dumps(sections))
    return str(path)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    assert cli.main(["gen-data", "--out", str(root / "data"), "--count", "8"]) == 0
    assert cli.main(["cues", "--data", str(root / "data"), "--out", str(root / "cues")]) == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(dataset):
    cfg = write_config(dataset / "quick.json", net=SMALL_NET, train={"iterations": 10, "batch_size": 2})
    out = dataset / "ck"
    assert cli.main(["train", "--data", str(dataset / "data"), "--cues", str(dataset / "cues"),
                     "--config", cfg, "--out", str(out)]) == 0
    return out


def test_gen_data_count_and_determinism(tmp_path):
    assert cli.main(["gen-data", "--out", str(tmp_path / "a"), "--count", "10"]) == 0
    assert cli.main(["gen-data", "--out", str(tmp_path / "b"), "--count", "10"]) == 0
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["count"] == 10 and len(manifest["samples"]) == 10
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_gen_data_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["gen-data", "--out", str(blocker / "sub"), "--count", "2"]) == 2


def test_bad_config_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", train={"iterations": 5, "learning_rate": 0.1})
    assert cli.main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d"), "--count", "1"]) == 2
    assert "learning_rate" in capsys.readouterr().err
    cfg = write_config(tmp_path / "c2.json", preset="imagenet")
    assert cli.main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d"), "--count", "1"]) == 2


def test_cue_masks_use_allowed_labels(dataset):
    manifest = json.loads((dataset / "data" / "manifest.json").read_text())
    for entry in manifest["samples"]:
        cues = read_pgm(dataset / "cues" / f"{entry['id']}.pgm")
        assert set(np.unique(cues).tolist()) <= {0, UNLABELED, *entry["labels"]}


def test_cues_fg_ratio_validated(dataset, tmp_path):
    assert cli.main(["cues", "--data", str(dataset / "data"), "--out", str(tmp_path), "--fg-ratio", "1.0"]) == 2


def test_cues_missing_heatmap(dataset, tmp_path):
    data = tmp_path / "data"
    assert cli.main(["gen-data", "--out", str(data), "--count", "2"]) == 0
    m = json.loads((data / "manifest.json").read_text())
    m["samples"][1]["heatmaps"] = {}
    (data / "manifest.json").write_text(json.dumps(m))
    assert cli.main(["cues", "--data", str(data), "--out", str(tmp_path / "c")]) == 2


def test_train_terms_mask_log(dataset, tmp_path):
    cfg = write_config(tmp_path / "c.json", net=SMALL_NET, train={"iterations": 4, "batch_size": 2})
    assert cli.main(["train", "--data", str(dataset / "data"), "--cues", str(dataset / "cues"),
                     "--config", cfg, "--out", str(tmp_path / "ck"), "--terms", "seed"]) == 0
    records = [json.loads(l) for l in (tmp_path / "ck" / "train_log.jsonl").read_text().splitlines()]
    assert len(records) == 4
    assert all(r["expand"] == 0 and r["constrain"] == 0 and r["seed"] > 0 for r in records)


def test_pooling_gap_with_decay_warns(dataset, tmp_path, caplog):
    cfg = write_config(tmp_path / "c.json", net=SMALL_NET, train={"iterations": 1, "batch_size": 2},
                       decay={"d_plus": 0.9, "d_bg": 0.95})
    with caplog.at_level(logging.WARNING, logger="secseg"):
        assert cli.main(["train", "--data", str(dataset / "data"), "--cues", str(dataset / "cues"),
                         "--config", cfg, "--out", str(tmp_path / "ck"), "--pooling", "gap"]) == 0
    assert "ignored" in caplog.text


def test_full_schedule_learning_rates(dataset, tmp_path):
    cfg = write_config(tmp_path / "c.json", preset="full-schedule", net=SMALL_NET,
                       train={"iterations": 2001, "batch_size": 1, "terms": ["seed"]})
    assert cli.main(["train", "--data", str(dataset / "data"), "--cues", str(dataset / "cues"),
                     "--config", cfg, "--out", str(tmp_path / "ck")]) == 0
    lrs = [json.loads(l)["lr"] for l in (tmp_path / "ck" / "train_log.jsonl").read_text().splitlines()]
    assert lrs[0] == pytest.approx(0.001) and lrs[1999] == pytest.approx(0.001)
    assert lrs[2000] == pytest.approx(0.0001)
    saved = json.loads((tmp_path / "ck" / "config.json").read_text())
    assert saved["train"]["lr_drop_every"] == 2000 and saved["train"]["momentum"] == 0.9


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_train_numerical_abort_exit_code(dataset, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", net=SMALL_NET,
                       train={"iterations": 50, "batch_size": 2, "lr0": 1e12, "terms": ["seed"]})
    assert cli.main(["train", "--data", str(dataset / "data"), "--cues", str(dataset / "cues"),
                     "--config", cfg, "--out", str(tmp_path / "ck")]) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_checkpoint_layout(checkpoint):
    m = json.loads((checkpoint / "manifest.json").read_text())
    assert m["format"] == "secseg-checkpoint"
    assert m["params"]["conv0.W"]["shape"] == [3, 3, 3, 4]
    for e in m["params"].values():
        assert (checkpoint / e["file"]).is_file()
    net, params, run = cli.load_checkpoint(checkpoint)
    assert set(params) == {"conv0.W", "conv0.b", "conv2.W", "conv2.b", "conv5.W", "conv5.b"}


def test_infer_pipeline(dataset, checkpoint, tmp_path):
    image_path = dataset / "data" / "images" / "0003.ppm"
    for flag in ("on", "off"):
        assert cli.main(["infer", "--ckpt", str(checkpoint), "--image", str(image_path),
                         "--out", str(tmp_path / f"{flag}.pgm"), "--crf", flag]) == 0
    on, off = read_pgm(tmp_path / "on.pgm"), read_pgm(tmp_path / "off.pgm")
    image = read_ppm(image_path)
    assert on.shape == off.shape == image.shape[:2]
    net, params, run = cli.load_checkpoint(checkpoint)
    probs = predict_probs(params, net, image)
    np.testing.assert_array_equal(off, probs.argmax(-1))
    np.testing.assert_array_equal(on, refine(image, probs, run.test_crf))


def test_infer_zero_pairwise_matches_off(dataset, checkpoint, tmp_path):
    cfg = write_config(tmp_path / "z.json", test_crf={"appearance_weight": 0.0, "smoothness_weight": 0.0})
    image = str(dataset / "data" / "images" / "0002.ppm")
    assert cli.main(["infer", "--ckpt", str(checkpoint), "--image", image, "--out", str(tmp_path / "z.pgm"),
                     "--config", cfg]) == 0
    assert cli.main(["infer", "--ckpt", str(checkpoint), "--image", image, "--out", str(tmp_path / "o.pgm"),
                     "--crf", "off"]) == 0
    np.testing.assert_array_equal(read_pgm(tmp_path / "z.pgm"), read_pgm(tmp_path / "o.pgm"))


def test_infer_architecture_mismatch(checkpoint, dataset, tmp_path):
    bad = tmp_path / "ck"
    bad.mkdir()
    for p in checkpoint.rglob("*"):
        if p.is_file():
            target = bad / p.relative_to(checkpoint)
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(p.read_bytes())
    m = json.loads((bad / "manifest.json").read_text())
    m["net"] = default_config(4, hidden=(8, 4)).to_dict()
    (bad / "manifest.json").write_text(json.dumps(m))
    assert cli.main(["infer", "--ckpt", str(bad), "--image", str(dataset / "data" / "images" / "0000.ppm"),
                     "--out", str(tmp_path / "m.pgm")]) == 2


def test_eval_identity_and_hand_case(tmp_path):
    pred, gt = tmp_path / "pred", tmp_path / "gt"
    pred.mkdir()
    gt.mkdir()
    write_pgm(gt / "a.pgm", np.array([[0, 1], [0, 1]]))
    write_pgm(pred / "a.pgm", np.array([[0, 1], [0, 1]]))
    assert cli.main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["miou"] == 1.0
    write_pgm(pred / "a.pgm", np.zeros((2, 2), int))
    assert cli.main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["miou"] == 0.25 and report["iou"] == [0.5, 0.0]


def test_eval_missing_file(tmp_path):
    pred, gt = tmp_path / "pred", tmp_path / "gt"
    pred.mkdir()
    gt.mkdir()
    write_pgm(gt / "a.pgm", np.zeros((2, 2), int))
    write_pgm(gt / "b.pgm", np.zeros((2, 2), int))
    write_pgm(pred / "a.pgm", np.zeros((2, 2), int))
    assert cli.main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(tmp_path / "r.json")]) == 2
    assert cli.main(["eval", "--pred", str(tmp_path / "nope"), "--gt", str(gt),
                     "--out", str(tmp_path / "r.json")]) == 2


def test_eval_size_mismatch(tmp_path):
    pred, gt = tmp_path / "pred", tmp_path / "gt"
    pred.mkdir()
    gt.mkdir()
    write_pgm(gt / "a.pgm", np.zeros((2, 2), int))
    write_pgm(pred / "a.pgm", np.zeros((3, 2), int))
    assert cli.main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(tmp_path / "r.json")]) == 2


def test_ablate_and_pooling_reports(dataset, tmp_path):
    cfg = write_config(tmp_path / "c.json", net=SMALL_NET, train={"iterations": 2, "batch_size": 2},
                       experiment={"train_count": 6})
    common = ["--data", str(dataset / "data"), "--cues", str(dataset / "cues"), "--config", cfg]
    assert cli.main(["ablate", *common, "--out", str(tmp_path / "a.json")]) == 0
    report = json.loads((tmp_path / "a.json").read_text())
    assert [r["variant"] for r in report["rows"]] == ["expand", "seed", "seed+expand", "seed+constrain", "all"]
    assert cli.main(["pooling-compare", *common, "--out", str(tmp_path / "p.json")]) == 0
    report = json.loads((tmp_path / "p.json").read_text())
    assert [r["pooling"] for r in report["rows"]] == ["gmp", "gwrp", "gap"]
    assert 0 < report["ground_truth_fg_fraction"] < 1
    assert all("fg_fraction" in r for r in report["rows"])


def test_experiment_needs_test_split(dataset, tmp_path):
    cfg = write_config(tmp_path / "c.json", experiment={"train_count": 8})
    assert cli.main(["ablate", "--data", str(dataset / "data"), "--cues", str(dataset / "cues"),
                     "--config", cfg, "--out", str(tmp_path / "a.json")]) == 2


def test_gradcheck_passes_and_lists_ops(capsys):
    assert cli.main(["gradcheck", "--module", "pooling", "--instances", "3"]) == 0
    out = capsys.readouterr().out
    assert "gwrp" in out and "all 1 checks passed" in out


def test_gradcheck_detects_fault(monkeypatch, capsys):
    real = pooling.gwrp_backward
    monkeypatch.setattr(pooling, "gwrp_backward", lambda order, d, g: 1.1 * real(order, d, g))
    assert cli.main(["gradcheck", "--module", "pooling", "--instances", "3"]) == 1
    assert "FAIL" in capsys.readouterr().out
