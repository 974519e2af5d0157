import json
import math

import mpmath
import numpy as np
import pytest

from contourreg.losses import (
    LossConfig,
    LossReport,
    cr_loss,
    cross_entropy_loss,
    dice_loss,
    finite_diff_check,
    gradient_check,
    one_hot,
    softmax,
    softmax_backward,
    total_loss,
)
from contourreg.morphology import contour


def random_case(seed, shape=(5, 4, 6), classes=3, scale=2.0):
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, scale, size=(classes,) + shape)
    y = rng.integers(0, classes, size=shape)
    return z, y


def checkerboard(shape):
    z, y, x = np.indices(shape)
    return ((x + y + z) % 2).astype(float)


def brute_dice(p, y, eps):
    classes = p.shape[0]
    terms = []
    for c in range(1, classes):
        inter = ps = ys = 0.0
        for v in np.ndindex(y.shape):
            pv = float(p[(c,) + v])
            yv = 1.0 if y[v] == c else 0.0
            inter += pv * yv
            ps += pv
            ys += yv
        terms.append((2 * inter + eps) / (ps + ys + eps))
    return 1.0 - sum(terms) / len(terms)


def brute_ce(z, y):
    total = 0.0
    for v in np.ndindex(y.shape):
        logits = [float(z[(c,) + v]) for c in range(z.shape[0])]
        m = max(logits)
        lse = m + math.log(sum(math.exp(l - m) for l in logits))
        total += lse - logits[y[v]]
    return total / y.size


# --- softmax ---------------------------------------------------------------


def test_softmax_uniform_and_stable():
    np.testing.assert_allclose(softmax(np.zeros((5, 2, 2, 2))), 0.2, rtol=0, atol=1e-15)
    p = softmax(np.array([1000.0, 0.0]).reshape(2, 1, 1, 1))
    assert p[0].item() == 1.0 and p[1].item() == pytest.approx(0.0, abs=1e-300)


def test_softmax_matches_extended_precision():
    z, _ = random_case(0, shape=(2, 3, 2), classes=4, scale=5.0)
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=0), 1.0, rtol=0, atol=1e-6)
    mpmath.mp.dps = 40
    for v in np.ndindex(z.shape[1:]):
        exps = [mpmath.exp(mpmath.mpf(float(z[(c,) + v]))) for c in range(4)]
        total = sum(exps)
        for c in range(4):
            assert p[(c,) + v] == pytest.approx(float(exps[c] / total), rel=1e-14)


# --- dice ------------------------------------------------------------------


def test_dice_perfect_overlap():
    _, y = random_case(1)
    cfg = LossConfig(num_classes=3)
    loss, _ = dice_loss(one_hot(y, 3), y, cfg)
    assert 0.0 <= loss <= 1e-4


def test_dice_uniform_closed_form():
    n, k, eps = 64, 10, 1e-5
    y = np.zeros(n, dtype=int)
    y[:k] = 1
    y = y.reshape(4, 4, 4)
    p = np.full((2, 4, 4, 4), 0.5)
    loss, _ = dice_loss(p, y, LossConfig(num_classes=2, cr_class=1))
    term = (2 * 0.5 * k + eps) / (0.5 * n + k + eps)
    assert loss == pytest.approx(1.0 - term, rel=1e-12)
    assert loss == pytest.approx(brute_dice(p, y, eps), rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_dice_matches_brute_force(seed):
    z, y = random_case(seed, classes=5)
    p = softmax(z)
    loss, _ = dice_loss(p, y, LossConfig())
    assert loss == pytest.approx(brute_dice(p, y, 1e-5), rel=1e-6)
    assert 0.0 <= loss <= 1.0


def test_dice_gradient_central_differences():
    z, y = random_case(7)
    p = softmax(z)
    cfg = LossConfig(num_classes=3)
    _, grad = dice_loss(p, y, cfg)
    h = 1e-6
    for i in range(0, p.size, 7):
        q = p.copy().ravel()
        q[i] += h
        up = dice_loss(q.reshape(p.shape), y, cfg)[0]
        q[i] -= 2 * h
        down = dice_loss(q.reshape(p.shape), y, cfg)[0]
        assert grad.ravel()[i] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-10)


def test_dice_geometry_mismatch():
    with pytest.raises(ValueError):
        dice_loss(np.full((3, 2, 2, 2), 1 / 3), np.zeros((2, 2, 3), dtype=int), LossConfig(num_classes=3))


# --- cross-entropy -----------------------------------------------------------


def test_ce_uniform_and_confident():
    _, y = random_case(2, classes=5)
    loss, _ = cross_entropy_loss(np.zeros((5,) + y.shape), y)
    assert loss == pytest.approx(math.log(5), rel=1e-14)
    loss, _ = cross_entropy_loss(60.0 * one_hot(y, 5), y)
    assert 0.0 <= loss < 1e-20


@pytest.mark.parametrize("seed", range(3))
def test_ce_matches_naive(seed):
    z, y = random_case(seed, classes=4)
    loss, grad = cross_entropy_loss(z, y)
    assert loss == pytest.approx(brute_ce(z, y), rel=1e-6)
    np.testing.assert_allclose(grad, (softmax(z) - one_hot(y, 4)) / y.size, rtol=1e-12)


# --- contour regularisation -------------------------------------------------


def test_cr_constant_is_zero():
    p = np.full((3, 4, 4, 4), 1 / 3)
    value, grad = cr_loss(p, LossConfig(num_classes=3))
    assert value == 0.0
    assert not grad.any()


@pytest.mark.parametrize("d", [1, 2, 3])
def test_cr_checkerboard(d):
    shape = (6, 5, 7)
    pt = checkerboard(shape)
    p = np.stack([1 - pt, np.zeros(shape), pt])
    value, _ = cr_loss(p, LossConfig(num_classes=3, d=d))
    assert value == pytest.approx(math.sqrt(pt.size), rel=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_cr_equals_norm_of_contour(seed):
    z, _ = random_case(seed)
    p = softmax(z)
    cfg = LossConfig(num_classes=3, d=1 + seed % 2)
    value, grad = cr_loss(p, cfg)
    assert value == pytest.approx(np.linalg.norm(contour(p[2], cfg.d).ravel()), rel=1e-12)
    assert not grad[[0, 1]].any()
    # each window contributes a +/- pair, so the gradient mass cancels
    assert abs(grad.sum()) < 1e-12


def test_cr_complement_symmetry():
    z, _ = random_case(4)
    p = softmax(z)
    q = p.copy()
    q[2] = 1.0 - p[2]
    cfg = LossConfig(num_classes=3)
    assert cr_loss(q, cfg)[0] == pytest.approx(cr_loss(p, cfg)[0], rel=1e-12)


def test_cr_gradient_scales_with_alpha():
    z, y = random_case(5)
    base = LossConfig(num_classes=3, alpha=0.0)
    _, g0 = total_loss(z, y, base)
    _, g1 = total_loss(z, y, LossConfig(num_classes=3, alpha=1.0))
    _, g3 = total_loss(z, y, LossConfig(num_classes=3, alpha=2.5))
    np.testing.assert_allclose(g3 - g0, 2.5 * (g1 - g0), rtol=1e-9, atol=1e-15)


# --- total -------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(cr_class=5)
    with pytest.raises(ValueError):
        LossConfig(alpha=-1)
    with pytest.raises(ValueError):
        LossConfig(dice_eps=0)
    with pytest.raises(ValueError):
        LossConfig(d=-1)


def test_total_alpha_zero():
    z, y = random_case(6)
    report, grad = total_loss(z, y, LossConfig(num_classes=3, alpha=0.0))
    assert report.total == report.dice + report.ce
    assert report.cr > 0
    p = softmax(z)
    _, gd = dice_loss(p, y, LossConfig(num_classes=3))
    _, gc = cross_entropy_loss(z, y)
    np.testing.assert_array_equal(grad, softmax_backward(p, gd) + gc)


def test_total_perfect_constant_labels():
    y = np.ones((4, 4, 4), dtype=int)
    z = 50.0 * one_hot(y, 3)
    report, _ = total_loss(z, y, LossConfig(num_classes=3))
    assert report.dice < 1e-4
    assert report.ce < 1e-15
    assert report.cr == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_total_matches_termwise(seed):
    z, y = random_case(seed, classes=5)
    cfg = LossConfig(alpha=1.5, d=1)
    report, grad = total_loss(z, y, cfg)
    p = softmax(z)
    dice, gd = dice_loss(p, y, cfg)
    ce, gc = cross_entropy_loss(z, y)
    cr, gr = cr_loss(p, cfg)
    assert report.total == pytest.approx(dice + ce + 1.5 * cr, rel=1e-9)
    # chain rule done by an explicit per-voxel Jacobian product
    gp = gd + 1.5 * gr
    expected = np.empty_like(z)
    for v in np.ndindex(y.shape):
        pv = p[(slice(None),) + v]
        jac = np.diag(pv) - np.outer(pv, pv)
        expected[(slice(None),) + v] = jac @ gp[(slice(None),) + v]
    np.testing.assert_allclose(grad, expected + gc, rtol=1e-9, atol=1e-15)


def test_total_rejects_bad_inputs():
    z, y = random_case(0)
    with pytest.raises(ValueError):
        total_loss(z, y[:, :, :-1], LossConfig(num_classes=3))
    with pytest.raises(ValueError):
        total_loss(z, y, LossConfig(num_classes=5))


def test_report_json_keys():
    report = LossReport(dice=0.5, ce=0.25, cr=2.0, alpha=0.5, total=1.75)
    assert list(json.loads(report.to_json())) == ["dice", "ce", "cr", "alpha", "total"]


# --- gradient check ------------------------------------------------------------


def test_gradcheck_reference_case():
    z, y = random_case(11, shape=(6, 6, 6), classes=3)
    cfg = LossConfig(num_classes=3, d=1, alpha=1.0)
    assert finite_diff_check(total_loss, z, y, cfg, h=1e-3, rng=0) < 1e-4
    cfg0 = LossConfig(num_classes=3, d=1, alpha=0.0)
    assert finite_diff_check(total_loss, z, y, cfg0, h=1e-3, rng=0) < 1e-4


def test_gradcheck_flat_field():
    y = np.zeros((4, 4, 4), dtype=int)
    z = np.zeros((3, 4, 4, 4))
    cfg = LossConfig(num_classes=3, alpha=1.0)
    p = softmax(z)
    value, grad = cr_loss(p, cfg)
    assert value == 0.0 and not grad.any()
    # the CR part alone, differenced at resolution h, also sees no slope
    h = 1e-3
    for i in (0, 17, 100):
        bumped = z.copy().ravel()
        bumped[i] += h
        up = cr_loss(softmax(bumped.reshape(z.shape)), cfg)[0]
        bumped[i] -= 2 * h
        down = cr_loss(softmax(bumped.reshape(z.shape)), cfg)[0]
        assert abs(up - down) / (2 * h) < 1e-3


def test_gradcheck_detects_corrupted_gradient():
    z, y = random_case(12, shape=(5, 5, 5))
    cfg = LossConfig(num_classes=3, alpha=1.0)

    def broken(logits, labels, c):
        report, grad = total_loss(logits, labels, c)
        return report, grad * 1.01

    assert finite_diff_check(broken, z, y, cfg, rng=0) > 1e-3


def test_gradcheck_counts():
    z, y = random_case(13, shape=(3, 3, 3))
    result = gradient_check(total_loss, z, y, LossConfig(num_classes=3, alpha=0.0), rng=0)
    # fewer coordinates than samples requested: every coordinate is checked
    assert result.checked == z.size and result.skipped == 0
