import numpy as np
import pytest

from secseg import gradcheck, losses, network


def test_small_suite_passes():
    results = gradcheck.run("pooling", instances=3) + gradcheck.run("losses", instances=3)
    assert results and all(r.passed for r in results)


def test_unknown_module():
    with pytest.raises(ValueError):
        gradcheck.run("optimizer")


def test_detects_broken_conv_backward(monkeypatch):
    real = network.conv_backward

    def wrong(dout, W, layer, cache):
        dx, dW, db = real(dout, W, layer, cache)
        return dx, dW * 1.01, db
    monkeypatch.setattr(network, "conv_backward", wrong)
    results = gradcheck.check_conv(instances=2)
    assert not any(r.passed for r in results)


def test_detects_broken_seeding_gradient(monkeypatch):
    real = losses.seeding_loss

    def wrong(f, cues, strict=True):
        loss, g = real(f, cues, strict)
        return loss, 0.5 * g
    monkeypatch.setattr(losses, "seeding_loss", wrong)
    assert not gradcheck.check_seeding(instances=2).passed


def test_nan_is_failure():
    assert not gradcheck.CheckResult("x", 1, float("nan"), 1e-4).passed
    assert "FAIL" in gradcheck.CheckResult("x", 1, 1.0, 1e-4).line()
