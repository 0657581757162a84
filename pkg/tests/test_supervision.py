import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from pointvsod import _kernels_py, kernels
from pointvsod import supervision as S
from pointvsod.config import LossConfig
from pointvsod.supervision import PointAnnotation
from pointvsod.tensor import Tensor

from gradcheck import max_relative_error

BACKENDS = [_kernels_py.flood_region]
if kernels.BACKEND == "cython":
    from pointvsod import _kernels
    BACKENDS.append(_kernels.flood_region)


def oracle_region(image, y, x, radius, threshold):
    """Connected component of {close colour} ∩ {inside disk} that holds the seed."""
    h, w = image.shape[:2]
    yy, xx = np.mgrid[:h, :w]
    close = np.sqrt(((image - image[y, x]) ** 2).sum(-1)) < threshold
    inside = (yy - y) ** 2 + (xx - x) ** 2 <= radius ** 2
    comp, _ = ndimage.label(close & inside)   # default structure is 4-connected
    return comp == comp[y, x]


def palette_image(rng, h=32, w=32):
    """Blocky few-colour image with small noise so regions are non-trivial."""
    palette = rng.random((3, 3))
    coarse = rng.integers(0, 3, (h // 4 + 1, w // 4 + 1))
    idx = np.kron(coarse, np.ones((4, 4), dtype=int))[:h, :w]
    return palette[idx] + rng.normal(0, 0.02, (h, w, 3))


# -- flood fill -------------------------------------------------------------------
@pytest.mark.parametrize("fill", BACKENDS, ids=lambda f: f.__module__.split(".")[-1])
def test_flood_fill_matches_oracle(fill):
    rng = np.random.default_rng(0)
    for _ in range(100):
        img = palette_image(rng)
        y, x = (int(v) for v in rng.integers(0, 32, 2))
        gamma = float(rng.choice([2.0, 4.0, 6.0]))
        r = 32 / gamma
        got = fill(img, y, x, r * r, 0.1).astype(bool)
        np.testing.assert_array_equal(got, oracle_region(img, y, x, r, 0.1))


def test_radius_law_exhaustive():
    img = np.full((24, 18, 3), 0.5)
    for gamma in (1.5, 2.0, 3.0, 4.0, 6.0, 9.0):
        r = S.growth_radius(img.shape[:2], gamma)
        for y in range(24):
            for x in range(18):
                lab = S.flood_fill(img, PointAnnotation("f", [(x, y)], []), gamma)
                ys, xs = np.nonzero(lab.foreground)
                assert np.sqrt((ys - y) ** 2 + (xs - x) ** 2).max() <= r + 1e-12


def test_disk_on_uniform_image():
    lab = S.flood_fill(np.full((12, 12, 3), 0.3), PointAnnotation("f", [(6, 6)], []), gamma=6)
    yy, xx = np.mgrid[:12, :12]
    disk = (yy - 6) ** 2 + (xx - 6) ** 2 <= 4
    np.testing.assert_array_equal(lab.foreground, disk)
    assert lab.foreground.sum() == 13


def test_small_region_is_its_component():
    img = np.zeros((20, 20, 3))
    img[5:8, 9:11] = [1.0, 0.2, 0.2]
    img[6, 11] = [1.0, 0.2, 0.2]
    lab = S.flood_fill(img, PointAnnotation("f", [(10, 6)], []), gamma=2)
    expected = np.all(img == [1.0, 0.2, 0.2], axis=-1)
    np.testing.assert_array_equal(lab.foreground, expected)


def test_tiny_radius_labels_only_seed():
    lab = S.flood_fill(np.full((12, 12, 3), 0.3), PointAnnotation("f", [(3, 4)], []), gamma=20)
    assert lab.foreground.sum() == 1 and lab.foreground[4, 3]


def test_foreground_wins_overlap_and_unlabelled_elsewhere():
    img = np.full((30, 30, 3), 0.4)
    lab = S.flood_fill(img, PointAnnotation("f", [(10, 10)], [(12, 10)]), gamma=6)
    assert lab.labels[10, 10] == S.FOREGROUND and lab.labels[10, 12] == S.FOREGROUND
    assert lab.labels[10, 17] == S.BACKGROUND
    assert lab.labels[0, 29] == S.UNLABELED
    assert set(np.unique(lab.labels)) <= {S.BACKGROUND, S.UNLABELED, S.FOREGROUND}


def test_annotation_validation():
    img = np.zeros((8, 8, 3))
    with pytest.raises(ValueError):
        S.flood_fill(img, PointAnnotation("f", [(8, 0)], []))
    with pytest.raises(ValueError):
        S.flood_fill(img, PointAnnotation("f", [(1, 1)], [(1, 1)]))


def test_gamma_sweep_coverage_decreases():
    rng = np.random.default_rng(1)
    img = palette_image(rng, 48, 48) * 0.0 + 0.5
    ann = PointAnnotation("f", [(20, 20)], [(5, 40)])
    cov = [S.flood_fill(img, ann, g).coverage() for g in (4, 5, 6)]
    assert cov[0] > cov[1] > cov[2]


# -- edge target --------------------------------------------------------------------
def test_edge_target_constant_and_step():
    assert np.all(S.edge_target(np.full((10, 10, 3), 0.7)) == 0)
    img = np.zeros((10, 10, 3))
    img[:, 5:] = 1.0
    e = S.edge_target(img)
    assert set(np.unique(e)) <= {0.0, 1.0}
    assert np.all(e[:, 4:6] == 1) and e[:, :4].sum() == 0 and e[:, 6:].sum() == 0


# -- losses ---------------------------------------------------------------------------
def leaf(rng, *shape):
    return Tensor(rng.uniform(0.05, 0.95, shape), requires_grad=True)


def kink_free_leaf(rng, *shape):
    """Distinct values spaced well beyond the finite-difference step, so |a - b| is smooth."""
    n = int(np.prod(shape))
    grid = 0.05 + 0.9 * (rng.permutation(n) + 0.5) / n
    return Tensor(grid.reshape(shape), requires_grad=True)


def test_bce_examples():
    y = (np.random.default_rng(2).random((6, 7)) > 0.5).astype(float)
    assert S.bce_loss(Tensor(y), y).item() <= y.size * 1e-6
    assert math.isclose(S.bce_loss(Tensor([0.5]), [1.0]).item(), math.log(2), rel_tol=1e-12)


def test_partial_bce_properties():
    rng = np.random.default_rng(3)
    p = leaf(rng, 6, 7)
    assert S.partial_bce_loss(p, np.full((6, 7), S.UNLABELED, np.uint8)).item() == 0.0
    mask = rng.random((6, 7)) > 0.5
    full = np.where(mask, S.FOREGROUND, S.BACKGROUND).astype(np.uint8)
    assert math.isclose(S.partial_bce_loss(p, full).item(), S.bce_loss(p, mask).item(), rel_tol=1e-12)
    labels = full.copy()
    labels[rng.random((6, 7)) > 0.5] = S.UNLABELED
    S.partial_bce_loss(p, labels).backward()
    assert np.all(p.grad[labels == S.UNLABELED] == 0.0)


def test_smoothness_properties():
    rng = np.random.default_rng(4)
    gray = rng.random((5, 6))
    assert S.smoothness_loss(Tensor(np.full((5, 6), 0.3)), gray).item() == 0.0
    s = rng.random((5, 6))
    tv = np.abs(np.diff(s, axis=0)).sum() + np.abs(np.diff(s, axis=1)).sum()
    assert math.isclose(S.smoothness_loss(Tensor(s), np.full((5, 6), 0.2)).item(), tv, rel_tol=1e-12)


def test_gcrf_closed_forms():
    img = np.full((1, 2, 3), 0.5)
    got = S.gated_crf_loss(Tensor([[0.0, 1.0]]), img, k=5, sigma_pt=3.0, sigma_i=0.1).item()
    f = 1.0 * math.exp(-1.0 / (2 * 3.0 ** 2))
    assert math.isclose(got, 2 * f, rel_tol=1e-12)
    rng = np.random.default_rng(5)
    assert S.gated_crf_loss(Tensor(np.full((6, 6), 0.4)), rng.random((6, 6, 3))).item() == 0.0


def test_gcrf_colour_bandwidth_monotone_and_symmetric():
    rng = np.random.default_rng(6)
    img = rng.random((8, 8, 3))
    s = rng.random((8, 8))
    narrow = S.gated_crf_loss(Tensor(s), img, sigma_i=0.1).item()
    wide = S.gated_crf_loss(Tensor(s), img, sigma_i=0.2).item()
    assert wide > narrow
    flipped = S.gated_crf_loss(Tensor(1.0 - s), img).item()
    assert math.isclose(flipped, narrow, rel_tol=1e-12)


def test_gcrf_brute_force():
    rng = np.random.default_rng(7)
    h, w, k, spt, si = 5, 6, 3, 1.5, 0.3
    s, img = rng.random((h, w)), rng.random((h, w, 3))
    r = k // 2
    total = 0.0
    for y in range(h):
        for x in range(w):
            nbrs = [(y + a, x + b) for a in range(-r, r + 1) for b in range(-r, r + 1)
                    if (a or b) and 0 <= y + a < h and 0 <= x + b < w]
            for v, u in nbrs:
                d2 = (y - v) ** 2 + (x - u) ** 2
                c2 = ((img[y, x] - img[v, u]) ** 2).sum()
                total += abs(s[y, x] - s[v, u]) * math.exp(-d2 / (2 * spt ** 2) - c2 / (2 * si ** 2)) / len(nbrs)
    got = S.gated_crf_loss(Tensor(s), img, k, spt, si).item()
    assert math.isclose(got, total, rel_tol=1e-12)


def _bce(p, rng):
    y = rng.random(p.shape) > 0.5
    return lambda: S.bce_loss(p, y)


def _pbce(p, rng):
    labels = rng.choice([S.BACKGROUND, S.UNLABELED, S.FOREGROUND], p.shape).astype(np.uint8)
    return lambda: S.partial_bce_loss(p, labels)


def _smooth(p, rng):
    gray = rng.random(p.shape)
    return lambda: S.smoothness_loss(p, gray)


def _gcrf(p, rng):
    img = rng.random(p.shape + (3,))
    return lambda: S.gated_crf_loss(p, img, 3, 2.0, 0.5)


LOSSES = {"bce": _bce, "pbce": _pbce, "smooth": _smooth, "gcrf": _gcrf}


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_loss_gradients(name):
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        p = kink_free_leaf(rng, 2, 5, 6)
        fn = LOSSES[name](p, rng)
        assert max_relative_error(fn, [p]) < 1e-3


# -- total loss ---------------------------------------------------------------------
def test_weights_are_the_documented_coefficients():
    w = S.loss_weights(LossConfig())
    assert w == {("s1", "bce"): 0.2,
                 ("s2", "pbce"): 1 / 3, ("s2", "smooth"): 1 / 3,
                 ("s3", "pbce"): 1 / 3, ("s3", "smooth"): 1 / 3,
                 ("s4", "pbce"): 1 / 3, ("s4", "smooth"): 1 / 3,
                 ("s_final", "pbce"): 1.0, ("s_final", "smooth"): 0.3, ("s_final", "gcrf"): 0.1}


def make_targets(rng, b=2, h=6, w=7):
    img = rng.random((b, h, w, 3))
    labels = rng.choice([S.BACKGROUND, S.UNLABELED, S.FOREGROUND], (b, h, w)).astype(np.uint8)
    edges = (rng.random((b, h, w)) > 0.8).astype(float)
    return S.Targets(img, labels, edges)


def test_perfect_prediction_total_near_zero():
    img = np.full((2, 8, 8, 3), 0.6)
    labels = np.full((2, 8, 8), S.UNLABELED, np.uint8)
    labels[:, 2:5, 2:5] = S.FOREGROUND
    targets = S.Targets(img, labels, np.zeros((2, 8, 8)))
    heads = {h: Tensor(np.ones((2, 8, 8))) for h in S.HEADS}
    heads["s1"] = Tensor(np.zeros((2, 8, 8)))
    assert S.total_loss(heads, targets).total.item() < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_total_is_nonnegative(seed):
    rng = np.random.default_rng(seed)
    targets = make_targets(rng)
    heads = {h: Tensor(rng.random((2, 6, 7))) for h in S.HEADS}
    terms = S.total_loss(heads, targets)
    assert terms.total.item() >= 0.0
    assert all(v >= 0.0 for v in terms.parts.values())
    assert math.isclose(sum(terms.by_term().values()), terms.total.item(), rel_tol=1e-12)


def test_total_loss_requires_all_heads():
    rng = np.random.default_rng(8)
    with pytest.raises(KeyError):
        S.total_loss({"s1": Tensor(rng.random((2, 6, 7)))}, make_targets(rng))


def test_total_loss_gradient():
    for seed in range(10):
        rng = np.random.default_rng(200 + seed)
        targets = make_targets(rng, b=1, h=5, w=5)
        heads = {h: kink_free_leaf(rng, 1, 5, 5) for h in S.HEADS}
        fn = lambda: S.total_loss(heads, targets, LossConfig(gcrf_kernel=3, gcrf_sigma_i=0.5)).total
        assert max_relative_error(fn, list(heads.values())) < 1e-3
