import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from rawprotect.metrics import PSNR_CAP, psnr, seg_metrics, ssim


def test_psnr_identical_is_capped():
    x = torch.rand(3, 16, 16)
    assert psnr(x, x) == PSNR_CAP == 100.0


def test_psnr_uniform_one_level_offset():
    x = torch.full((3, 16, 16), 0.5, dtype=torch.float64)
    assert psnr(x, x + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-6)
    assert psnr(x, x + 1 / 255) == pytest.approx(48.13, abs=0.005)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_psnr_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((3, 12, 12)), rng.random((3, 12, 12))
    mse = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert psnr(torch.from_numpy(a), torch.from_numpy(b)) == pytest.approx(10 * math.log10(1 / mse), abs=1e-6)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(torch.rand(3, 4, 4), torch.rand(3, 4, 5))


def test_ssim_identical_is_one():
    x = torch.rand(3, 32, 32)
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-6)


def test_ssim_constants_closed_form():
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    expected = (2 * 0.5 * 0.6 + c1) / (0.5 ** 2 + 0.6 ** 2 + c1) * (0 + c2) / (0 + c2)
    value = ssim(torch.full((1, 16, 16), 0.5, dtype=torch.float64),
                 torch.full((1, 16, 16), 0.6, dtype=torch.float64))
    assert value == pytest.approx(expected, abs=1e-6)


def test_ssim_of_negative_is_negative():
    g = torch.Generator().manual_seed(0)
    x = 0.5 + 0.3 * (torch.rand(1, 32, 32, generator=g) - 0.5)  # mean-0.5 content
    assert ssim(x, 1 - x) < 0


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(torch.rand(3, 8, 8), torch.rand(3, 8, 8))


def _mask(rows):
    return torch.tensor(rows, dtype=torch.float32)[None]


def test_seg_hand_confusion_matrix():
    gt = _mask([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]])
    pred = _mask([[0.9, 0.2, 0.7, 0], [0.8, 0.6, 0, 0], [0, 0, 0, 0], [0, 0, 0.51, 0]])
    # tp 3, fn 1, fp 2
    recall, f1, iou = seg_metrics(pred, gt)
    assert recall == pytest.approx(3 / 4)
    assert f1 == pytest.approx(6 / 9)
    assert iou == pytest.approx(3 / 6)


def test_seg_threshold_is_strict():
    gt = _mask([[1, 0]])
    assert seg_metrics(_mask([[0.5, 0.0]]), gt) == (0.0, 0.0, 0.0)
    assert seg_metrics(_mask([[0.5, 0.0]]), gt, threshold=0.4) == (1.0, 1.0, 1.0)


def test_seg_empty_ground_truth_convention():
    gt = torch.zeros(1, 4, 4)
    assert seg_metrics(torch.zeros(1, 4, 4), gt) == (1.0, 1.0, 1.0)
    p = torch.zeros(1, 4, 4)
    p[0, 0, 0] = 1
    assert seg_metrics(p, gt) == (0.0, 0.0, 0.0)


def test_seg_requires_binary_gt():
    with pytest.raises(ValueError):
        seg_metrics(torch.zeros(1, 2, 2), torch.full((1, 2, 2), 0.3))


def test_f1_iou_identity_on_1000_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        gt = torch.from_numpy((rng.random((1, 16, 16)) < rng.uniform(0.05, 0.6)).astype(np.float32))
        pred = torch.from_numpy(rng.random((1, 16, 16)).astype(np.float32))
        _, f1, iou = seg_metrics(pred, gt)
        assert f1 == pytest.approx(2 * iou / (1 + iou), abs=1e-12)
        assert 0 <= iou <= f1 <= 1
