import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pointvsod import metrics as M


def mae_oracle(pred, gt):
    total = 0.0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            total += abs(float(pred[i, j]) - float(gt[i, j]))
    return total / pred.size


def fmax_oracle(pred, gt, beta2=0.3):
    best = 0.0
    n_gt = int(gt.sum())
    for t in np.linspace(0.0, 1.0, 255):
        tp = fp = 0
        for p, g in zip(pred.ravel(), gt.ravel()):
            if p >= t:
                if g:
                    tp += 1
                else:
                    fp += 1
        precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
        recall = 1.0 if n_gt == 0 else tp / n_gt
        den = beta2 * precision + recall
        f = 0.0 if den == 0 else (1 + beta2) * precision * recall / den
        best = max(best, f)
    return best


def random_pair(rng, n=16):
    gt = rng.random((n, n)) > rng.uniform(0.2, 0.8)
    pred = np.clip(0.6 * gt + rng.normal(0.2, 0.25, (n, n)), 0, 1)
    return pred, gt


def test_mae_examples():
    gt = np.eye(4, dtype=bool)
    assert M.mae(gt.astype(float), gt) == 0.0
    assert M.mae(np.full((3, 3), 0.5), np.zeros((3, 3))) == 0.5
    rng = np.random.default_rng(0)
    p, g = rng.random((8, 8)), rng.random((8, 8)) > 0.5
    assert abs(M.mae(p, g) - mae_oracle(p, g)) < 1e-12


def test_f_beta_example():
    assert math.isclose(float(M.f_beta(1.0, 0.5, 0.3)), 0.8125, rel_tol=1e-15)
    assert float(M.f_beta(0.0, 0.0)) == 0.0


def test_against_brute_force_oracles():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p, g = random_pair(rng)
        assert abs(M.mae(p, g) - mae_oracle(p, g)) < 1e-9
        assert abs(M.f_beta_max(p, g) - fmax_oracle(p, g)) < 1e-9


def test_perfect_predictions():
    rng = np.random.default_rng(2)
    for _ in range(20):
        gt = np.zeros((16, 16), bool)
        y, x = rng.integers(2, 10, 2)
        gt[y:y + rng.integers(2, 6), x:x + rng.integers(2, 6)] = True
        pred = gt.astype(float)
        assert M.mae(pred, gt) == 0.0
        assert M.f_beta_max(pred, gt) == 1.0
        assert M.s_measure(pred, gt) >= 0.95


def test_s_measure_alpha_extremes():
    rng = np.random.default_rng(3)
    for _ in range(10):
        p, g = random_pair(rng)
        assert M.s_measure(p, g, alpha=1.0) == pytest.approx(M.s_object(p, g), abs=0, rel=1e-15)
        assert M.s_measure(p, g, alpha=0.0) == pytest.approx(M.s_region(p, g), abs=0, rel=1e-15)


def test_s_measure_degenerate_ground_truth():
    pred = np.full((4, 4), 0.25)
    assert M.s_measure(pred, np.zeros((4, 4))) == 0.75
    assert M.s_measure(pred, np.ones((4, 4))) == 0.25


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        M.mae(np.zeros((3, 3)), np.zeros((3, 4)))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (8, 8), elements=st.floats(0, 1)), st.integers(0, 2 ** 32 - 1))
def test_exact_max_f_invariant_under_monotone_maps(pred, seed):
    gt = np.random.default_rng(seed).random((8, 8)) > 0.5
    a = M.f_beta_max(pred, gt, thresholds="exact")
    b = M.f_beta_max(pred ** 2, gt, thresholds="exact")
    assert abs(a - b) < 1e-12


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (8, 8), elements=st.floats(0, 1)), st.integers(0, 2 ** 32 - 1))
def test_metric_ranges(pred, seed):
    gt = np.random.default_rng(seed).random((8, 8)) > 0.5
    assert 0.0 <= M.mae(pred, gt) <= 1.0
    assert 0.0 <= M.f_beta_max(pred, gt) <= 1.0
    assert 0.0 <= M.s_measure(pred, gt) <= 1.0


def test_summary_aggregates_frames():
    rng = np.random.default_rng(4)
    frames = [M.evaluate_frame(*random_pair(rng), "seq", str(i)) for i in range(6)]
    s = M.summarize(frames)
    assert s.count == 6
    assert s.mae == pytest.approx(np.mean([f.mae for f in frames]), rel=1e-15)
    assert s.s_measure == pytest.approx(np.mean([f.s_measure for f in frames]), rel=1e-15)
    per = M.summarize(frames, fmax_mode="per_frame")
    assert per.f_beta_max == pytest.approx(np.mean([f.f_beta_max for f in frames]), rel=1e-15)
    # the max of the mean curve cannot exceed the mean of the maxima
    assert s.f_beta_max <= per.f_beta_max + 1e-12
    with pytest.raises(ValueError):
        M.summarize([])
