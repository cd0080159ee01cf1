"""Fidelity (PSNR, SSIM) and localization (recall, F1, IoU) metrics."""
from __future__ import annotations

import torch
import torch.nn.functional as F

PSNR_CAP = 100.0


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """10 log10(1 / MSE) for data in [0, 1], capped at 100 dB."""
    _check_pair(a, b)
    mse = float(((a.detach().double() - b.detach().double()) ** 2).mean())
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return 10 * torch.log10(torch.tensor(1.0 / mse, dtype=torch.float64)).item()


def _gaussian_window(size: int, sigma: float, dtype) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-x ** 2 / (2 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over all valid window positions and channels."""
    _check_pair(a, b)
    if min(a.shape[-2:]) < window:
        raise ValueError(f"images must be at least {window}x{window}, got {tuple(a.shape[-2:])}")
    x = a.detach().double().reshape(-1, 1, *a.shape[-2:])
    y = b.detach().double().reshape(-1, 1, *b.shape[-2:])
    w = _gaussian_window(window, sigma, torch.float64)[None, None]
    mu_x, mu_y = F.conv2d(x, w), F.conv2d(y, w)
    sxx = F.conv2d(x * x, w) - mu_x ** 2
    syy = F.conv2d(y * y, w) - mu_y ** 2
    sxy = F.conv2d(x * y, w) - mu_x * mu_y
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float((num / den).mean())


def seg_metrics(pred: torch.Tensor, gt: torch.Tensor, threshold: float = 0.5):
    """Pixel (recall, F1, IoU) of ``pred > threshold`` against a binary ``gt``.

    An empty ground truth scores (1, 1, 1) if nothing is predicted and
    (0, 0, 0) otherwise.
    """
    _check_pair(pred, gt)
    if not bool(((gt == 0) | (gt == 1)).all()):
        raise ValueError("ground-truth mask must be binary")
    p = pred.detach() > threshold
    g = gt.detach() > 0.5
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    if tp + fn == 0:
        return (1.0, 1.0, 1.0) if fp == 0 else (0.0, 0.0, 0.0)
    return tp / (tp + fn), 2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn)
