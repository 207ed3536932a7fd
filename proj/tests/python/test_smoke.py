import math

import numpy as np
import pytest

import fsg_lab


def test_binarize_is_sign_like():
    w = np.random.default_rng(0).normal(size=(5, 7))
    b = fsg_lab.binarize(w)
    assert b.shape == w.shape
    assert set(np.unique(b)) <= {-1.0, 1.0}


def test_preprocess_range_and_zero_guard():
    w_hat, da, scale = fsg_lab.preprocess(np.array([-2.0, 0.0, 3.0]))
    assert np.all((w_hat >= 0) & (w_hat <= 1))
    assert scale == pytest.approx(math.tanh(3.0))
    w_hat, da, scale = fsg_lab.preprocess(np.zeros(4))
    assert np.all(np.isfinite(w_hat)) and np.all(da == 0)


def test_zoh_scalar():
    a_bar, b_bar = fsg_lab.ssm_discretize(np.array([-1.0]), np.array([[1.0]]), 0.1)
    assert a_bar[0] == pytest.approx(math.exp(-0.1), abs=1e-12)
    assert b_bar[0, 0] == pytest.approx(-math.expm1(-0.1), abs=1e-12)


def test_scan_matches_conv():
    rng = np.random.default_rng(1)
    a = np.array([[0.9, 0.5]])
    b = rng.normal(size=(1, 2))
    c = rng.normal(size=(1, 2))
    x = rng.normal(size=20)
    np.testing.assert_allclose(fsg_lab.ssm_scan(a, b, c, x), fsg_lab.ssm_conv(a, b, c, x), atol=1e-12)


def test_momentum_expand_matches_loop():
    rng = np.random.default_rng(2)
    grads = [rng.normal(size=3) for _ in range(5)]
    v = np.zeros(3)
    for g in grads:
        v = 0.9 * v - 0.1 * g
    np.testing.assert_allclose(fsg_lab.momentum_expand(0.9, 0.1, grads), v, atol=1e-14)


def test_compose_cancellation():
    one = np.ones(3)
    np.testing.assert_array_equal(fsg_lab.compose_gradient(one, one, one, 1.0, 1.0), np.zeros(3))
    np.testing.assert_array_equal(fsg_lab.compose_gradient(one * 2, None, one * 0.5, 1.0, 0.3), one)


def test_history_buffer():
    buf = fsg_lab.GradientHistoryBuffer(0, 3, 2)
    for t in range(5):
        buf.push(np.array([t, t + 0.5]))
    assert len(buf) == 3
    np.testing.assert_array_equal(buf.window().ravel(), [2, 2.5, 3, 3.5, 4, 4.5])


def test_config_defaults_and_errors():
    text = fsg_lab.canonical_config("")
    assert "beta: 0.3" in text and "l: 6" in text
    assert fsg_lab.canonical_config(text) == text
    with pytest.raises(fsg_lab.ConfigError):
        fsg_lab.canonical_config("train:\n  l: 0\n")
    with pytest.raises(fsg_lab.ConfigError):
        fsg_lab.canonical_config("train:\n  bogus: 1\n")


def test_train_is_deterministic(tmp_path):
    cfg = """
train: {method: fsg, epochs: 2, batch_size: 50, lr: 0.01, seed: 3}
hypernet: {d: 4, fast_hidden: 8}
data: {kind: blobs, n_per_class: 40, noise: 0.3}
"""
    a = fsg_lab.train(cfg, tmp_path / "a")
    b = fsg_lab.train(cfg, tmp_path / "b")
    assert a == b
    assert [r["split"] for r in a] == ["train", "train"]
    assert all(r["loss"] >= 0 and 0 <= r["accuracy"] <= 1 for r in a)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_fast_checks_pass():
    results = fsg_lab.run_checks([2, 3, 5, 6])
    assert all(passed for _, _, passed, _ in results), results
