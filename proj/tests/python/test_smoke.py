"""Smoke tests for the mmgpy extension module."""

import math

import numpy as np
import pytest

import mmgpy


def test_delta_round_trip():
    rng = np.random.default_rng(0)
    torso = rng.normal(size=(64, 9))
    delta = mmgpy.to_delta(torso)
    assert delta.shape == torso.shape
    assert np.all(delta[0, :3] == 0.0)
    back = mmgpy.from_delta(delta, origin=tuple(torso[0, :3]))
    assert np.max(np.abs(back - torso)) < 1e-9


def test_softmax_rows():
    x = np.array([[0.0, 0.0], [0.0, -2.0]])
    y = mmgpy.softmax(x)
    assert y[0, 0] == pytest.approx(0.5)
    assert y[1, 0] == pytest.approx(0.8808, abs=5e-5)
    assert np.allclose(y.sum(axis=1), 1.0)


def test_nearest_codes_matches_numpy():
    rng = np.random.default_rng(1)
    emb = rng.normal(size=(16, 4))
    z = rng.normal(size=(32, 4))
    got = np.array(mmgpy.nearest_codes(emb, z))
    want = np.argmin(((z[:, None, :] - emb[None, :, :]) ** 2).sum(-1), axis=1)
    assert np.array_equal(got, want)


def test_semantic_weights_hand_case():
    emb = np.array([[0.0, 0.0], [2.0, 0.0]])
    w = mmgpy.semantic_weights(emb, i_star=0, t=1.0)
    assert w[0] == pytest.approx(0.8808, abs=5e-5)
    assert w[1] == pytest.approx(0.1192, abs=5e-5)
    assert sum(w) == pytest.approx(1.0)


def test_sample_next_greedy_and_determinism():
    rng = np.random.default_rng(2)
    emb = rng.normal(size=(8, 4))
    logits = [0.1, 3.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.5, -9.0, -9.0, -9.0]
    assert mmgpy.sample_next(logits, emb, sampler="greedy") == 1
    a = mmgpy.sample_next(logits, emb, sampler="semantic", seed=7)
    b = mmgpy.sample_next(logits, emb, sampler="semantic", seed=7)
    assert a == b
    assert 0 <= a < 11


def test_fid_identical_and_offset():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(500, 6))
    assert abs(mmgpy.fid(x, x)) < 1e-6
    y = rng.normal(size=(500, 6)) + 1.0
    assert mmgpy.fid(x, y) > 1.0


def test_motion_file_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    torso = rng.normal(size=(16, 9)).astype(np.float32).astype(np.float64)
    hands = rng.normal(size=(16, 4)).astype(np.float32).astype(np.float64)
    path = str(tmp_path / "clip.mot")
    mmgpy.write_motion(path, torso, hands, hands, fps=20, labels=["walks"])
    clip = mmgpy.read_motion(path)
    assert clip["fps"] == 20
    assert np.array_equal(clip["torso"], torso)
    assert clip["labels"] == ["walks"]


def test_synth_dataset_deterministic():
    a = mmgpy.synth_dataset("music", count=4, seed=5)
    b = mmgpy.synth_dataset("music", count=4, seed=5)
    assert len(a) == 4
    for sa, sb in zip(a, b):
        assert np.array_equal(sa["torso"], sb["torso"])
        assert sa["beat_times"] == sb["beat_times"]
    with pytest.raises(mmgpy.ConfigError):
        mmgpy.synth_dataset("video", count=2, seed=0)


def test_beat_alignment_range():
    samples = mmgpy.synth_dataset("music", count=2, seed=6, min_frames=48, max_frames=48)
    for s in samples:
        if not s["beat_times"]:
            continue
        score = mmgpy.beat_alignment(s["torso"], 20, s["beat_times"])
        assert 0.0 <= score <= 1.0


def test_error_types():
    with pytest.raises(mmgpy.DataError):
        mmgpy.read_motion("/nonexistent/path.mot")
    with pytest.raises(mmgpy.DataError):
        mmgpy.to_delta(np.zeros((0, 3)))
