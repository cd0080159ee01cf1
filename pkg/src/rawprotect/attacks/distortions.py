"""Image distortions, colour adjustments and cropping.

Every op comes in two flavours: a differentiable torch version used for
gradients, and a "real" version on 8-bit HxWx3 arrays built from OpenCV's
integer routines. The stop-gradient bridge glues the two together.
"""
from __future__ import annotations

import math

import cv2
import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF

from .jpeg import diff_jpeg, jpeg_codec

DISTORTION_KINDS = ("rescale", "median_blur", "gaussian_blur", "awgn", "jpeg")
COLOR_KINDS = ("hue", "contrast", "saturation", "brightness")
COLOR_RANGES = {"hue": (-0.05, 0.05), "contrast": (0.7, 1.5),
                "saturation": (0.7, 1.5), "brightness": (0.7, 1.5)}


def _batched(fn):
    def wrapper(img, *args, **kwargs):
        if img.dim() == 3:
            return fn(img[None], *args, **kwargs)[0]
        return fn(img, *args, **kwargs)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _odd_kernel(k) -> int:
    k = int(k)
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {k}")
    return k


def rescaled_size(h: int, w: int, rate: float) -> tuple[int, int]:
    if not rate > 0:
        raise ValueError(f"rescale rate must be positive, got {rate}")
    return max(1, int(round(h * rate))), max(1, int(round(w * rate)))


@_batched
def rescale(img: torch.Tensor, rate: float) -> torch.Tensor:
    """Bilinear resize by ``rate`` and back to the original size."""
    h, w = img.shape[-2:]
    size = rescaled_size(h, w, rate)
    if size == (h, w):
        return img
    small = F.interpolate(img, size=size, mode="bilinear", align_corners=False)
    return F.interpolate(small, size=(h, w), mode="bilinear", align_corners=False)


@_batched
def median_blur(img: torch.Tensor, k: int) -> torch.Tensor:
    """k x k median with replicated borders (the gradient goes to the median pixel)."""
    k = _odd_kernel(k)
    n, c, h, w = img.shape
    p = k // 2
    patches = F.unfold(F.pad(img, (p, p, p, p), mode="replicate"), k)
    return patches.view(n, c, k * k, h * w).median(dim=2).values.view(n, c, h, w)


def gaussian_kernel1d(k: int, sigma: float) -> np.ndarray:
    k = _odd_kernel(k)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.arange(k) - (k - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


@_batched
def gaussian_blur(img: torch.Tensor, k: int, sigma: float) -> torch.Tensor:
    """Separable k x k Gaussian, mirrored borders without edge repeat."""
    g = torch.from_numpy(gaussian_kernel1d(k, sigma)).to(img)
    c = img.shape[1]
    p = k // 2
    x = F.pad(img, (p, p, p, p), mode="reflect")
    x = F.conv2d(x, g.view(1, 1, 1, k).repeat(c, 1, 1, 1), groups=c)
    return F.conv2d(x, g.view(1, 1, k, 1).repeat(c, 1, 1, 1), groups=c)


def awgn_noise(shape, sigma: float, seed: int) -> np.ndarray:
    """The noise field is a pure function of its seed so both routes share it."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    return np.random.default_rng(seed).normal(0.0, sigma, size=shape)


def awgn(img: torch.Tensor, sigma: float, seed: int) -> torch.Tensor:
    """Add a [C, H, W] noise field (shared across a batch) and clamp."""
    if sigma == 0:
        return img
    noise = torch.from_numpy(awgn_noise(tuple(img.shape[-3:]), sigma, seed)).to(img)
    return (img + noise).clamp(0, 1)


def distort(img: torch.Tensor, kind: str, params: dict) -> torch.Tensor:
    """Differentiable distortion; ``params`` is the record drawn by the scheduler."""
    if kind == "rescale":
        return rescale(img, params["rate"])
    if kind == "median_blur":
        return median_blur(img, params["k"])
    if kind == "gaussian_blur":
        return gaussian_blur(img, params["k"], params["sigma"])
    if kind == "awgn":
        return awgn(img, params["sigma"], params["seed"])
    if kind == "jpeg":
        return diff_jpeg(img, params["quality"])
    raise ValueError(f"unknown distortion {kind!r}")


def distort_real(arr: np.ndarray, kind: str, params: dict) -> np.ndarray:
    """The same distortion on an HxWx3 uint8 array, returning uint8."""
    h, w = arr.shape[:2]
    if kind == "rescale":
        nh, nw = rescaled_size(h, w, params["rate"])
        if (nh, nw) == (h, w):
            return arr.copy()
        small = cv2.resize(arr, (nw, nh), interpolation=cv2.INTER_LINEAR)
        return cv2.resize(small, (w, h), interpolation=cv2.INTER_LINEAR)
    if kind == "median_blur":
        return cv2.medianBlur(arr, _odd_kernel(params["k"]))
    if kind == "gaussian_blur":
        k = _odd_kernel(params["k"])
        return cv2.GaussianBlur(arr, (k, k), params["sigma"], borderType=cv2.BORDER_REFLECT_101)
    if kind == "awgn":
        # noise is generated channel-first to line up with the tensor route
        noise = awgn_noise((3, h, w), params["sigma"], params["seed"]).transpose(1, 2, 0)
        out = np.clip(arr / 255.0 + noise, 0, 1)
        return np.rint(out * 255).astype(np.uint8)
    if kind == "jpeg":
        return jpeg_codec(arr, params["quality"])
    raise ValueError(f"unknown distortion {kind!r}")


# BT.601 weights; they sum to one so grey pixels are fixed points of the blends
_LUMA_W = (0.299, 0.587, 0.114)


def _luma(img: torch.Tensor) -> torch.Tensor:
    r, g, b = img.unbind(-3)
    return (_LUMA_W[0] * r + _LUMA_W[1] * g + _LUMA_W[2] * b).unsqueeze(-3)


def check_color_factor(kind: str, factor: float) -> None:
    if kind not in COLOR_RANGES:
        raise ValueError(f"unknown colour adjustment {kind!r}")
    lo, hi = COLOR_RANGES[kind]
    if not lo <= factor <= hi:
        raise ValueError(f"{kind} factor {factor} outside [{lo}, {hi}]")


def color_adjust(img: torch.Tensor, kind: str, factor: float) -> torch.Tensor:
    """Hue rotation, contrast, saturation or brightness; output clamped to [0, 1]."""
    check_color_factor(kind, factor)
    if kind == "hue":
        out = TF.adjust_hue(img, factor) if factor != 0 else img
    elif kind == "contrast":
        mean = _luma(img).mean(dim=(-3, -2, -1), keepdim=True)
        out = mean + factor * (img - mean) if factor != 1 else img
    elif kind == "saturation":
        luma = _luma(img)
        out = luma + factor * (img - luma) if factor != 1 else img
    else:
        out = img * factor
    return out.clamp(0, 1)


def crop_window(h: int, w: int, survival: float, rng: np.random.Generator):
    """Top-left corner and size of a crop keeping ``survival`` of the area."""
    if not 0.49 <= survival <= 1.0:
        raise ValueError(f"crop survival must lie in [0.49, 1], got {survival}")
    side = math.sqrt(survival)
    ch, cw = max(1, int(round(h * side))), max(1, int(round(w * side)))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    return y0, x0, ch, cw


def apply_crop(img: torch.Tensor, mask: torch.Tensor | None, window):
    """Crop both tensors to ``window`` and resize back (bilinear / nearest)."""
    y0, x0, ch, cw = window
    h, w = img.shape[-2:]
    if (ch, cw) == (h, w):
        return img, mask
    sub = img[..., y0:y0 + ch, x0:x0 + cw]
    out = F.interpolate(sub[None] if sub.dim() == 3 else sub, size=(h, w),
                        mode="bilinear", align_corners=False)
    out = out[0] if img.dim() == 3 else out
    if mask is not None:
        m = mask[..., y0:y0 + ch, x0:x0 + cw]
        m4 = m[None] if m.dim() == 3 else m
        m4 = F.interpolate(m4, size=(h, w), mode="nearest")
        mask = m4[0] if m.dim() == 3 else m4
    return out, mask


def random_crop(img, mask, survival: float, rng: np.random.Generator):
    """Random crop of area fraction ``survival`` applied to image and mask alike."""
    window = crop_window(img.shape[-2], img.shape[-1], survival, rng)
    return apply_crop(img, mask, window)
