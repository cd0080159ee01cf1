"""Differentiable JPEG (4:2:0, baseline tables) and the real codec it approximates."""
from __future__ import annotations

import math

import cv2
import numpy as np
import torch
import torch.nn.functional as F

_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99]], dtype=np.float64)

_CHROMA = np.full((8, 8), 99.0)
_CHROMA[:4, :4] = [[17, 18, 24, 47], [18, 21, 26, 66], [24, 26, 56, 99], [47, 66, 99, 99]]


def quant_table(quality: int, chroma: bool = False) -> np.ndarray:
    """Annex K table scaled with the IJG quality convention."""
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"JPEG quality must be in 1..100, got {quality}")
    q = int(quality)
    scale = 5000 / q if q < 50 else 200 - 2 * q
    base = _CHROMA if chroma else _LUMA
    return np.clip(np.floor((base * scale + 50) / 100), 1, 255)


def _dct_matrix() -> torch.Tensor:
    d = np.zeros((8, 8))
    for k in range(8):
        c = math.sqrt(1 / 8) if k == 0 else math.sqrt(2 / 8)
        for n in range(8):
            d[k, n] = c * math.cos(math.pi * (2 * n + 1) * k / 16)
    return torch.from_numpy(d)


_D = _dct_matrix()


def ste_round(x: torch.Tensor) -> torch.Tensor:
    """Round in the forward pass, identity in the backward pass."""
    return x + (torch.round(x) - x).detach()


def _blocks(x):  # [B, H, W] -> [B, H/8, W/8, 8, 8]
    b, h, w = x.shape
    return x.reshape(b, h // 8, 8, w // 8, 8).permute(0, 1, 3, 2, 4)


def _unblocks(x):
    b, hb, wb = x.shape[:3]
    return x.permute(0, 1, 3, 2, 4).reshape(b, hb * 8, wb * 8)


def _code_plane(plane: torch.Tensor, table: np.ndarray, round_fn) -> torch.Tensor:
    d = _D.to(plane)
    q = torch.from_numpy(table).to(plane)
    coef = d @ _blocks(plane - 128) @ d.T
    coef = round_fn(coef / q) * q
    return _unblocks(d.T @ coef @ d) + 128


def diff_jpeg(img: torch.Tensor, quality: int, round_fn=ste_round) -> torch.Tensor:
    """JPEG compress-decompress in float arithmetic with straight-through rounding.

    ``img`` is [3, H, W] or [N, 3, H, W] in [0, 1] with H, W multiples of 16.
    """
    luma_q = quant_table(quality)
    chroma_q = quant_table(quality, chroma=True)
    unbatched = img.dim() == 3
    x = img[None] if unbatched else img
    n, _, h, w = x.shape
    if h % 16 or w % 16:
        raise ValueError(f"diff_jpeg needs H and W multiples of 16, got {h}x{w}")
    x = x * 255
    r, g, b = x[:, 0], x[:, 1], x[:, 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128
    chroma = F.avg_pool2d(torch.stack((cb, cr), 1), 2)  # 4:2:0
    y = _code_plane(y, luma_q, round_fn)
    chroma = _code_plane(chroma.flatten(0, 1), chroma_q, round_fn).view(n, 2, h // 2, w // 2)
    # libjpeg's "fancy" upsampling is the 3/4-1/4 triangle filter
    chroma = F.interpolate(chroma, scale_factor=2, mode="bilinear", align_corners=False)
    cb, cr = chroma[:, 0] - 128, chroma[:, 1] - 128
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    out = (torch.stack((r, g, b), 1) / 255).clamp(0, 1)
    return out[0] if unbatched else out


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """[3, H, W] float -> HxWx3 uint8 (round half to even)."""
    return np.rint(img.detach().cpu().double().clamp(0, 1).numpy() * 255).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray, like: torch.Tensor | None = None) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).double() / 255
    return t.to(like) if like is not None else t.float()


def jpeg_codec(arr: np.ndarray, quality: int) -> np.ndarray:
    """Encode/decode an HxWx3 RGB uint8 array with OpenCV's libjpeg."""
    ok, buf = cv2.imencode(".jpg", cv2.cvtColor(arr, cv2.COLOR_RGB2BGR),
                           [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    if not ok:
        raise RuntimeError("JPEG encoding failed")
    return cv2.cvtColor(cv2.imdecode(buf, cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB)
