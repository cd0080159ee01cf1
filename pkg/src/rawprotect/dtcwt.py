"""Dual-tree complex wavelet transform in PyTorch.

Level 1 uses the near-symmetric 13,19-tap biorthogonal pair ("near_sym_b"),
levels >= 2 the 14-tap quarter-shift pair ("qshift_b"). Boundaries use
symmetric extension with repeated end samples. Everything is a linear map built
from index gathers and 1-D convolutions, so autograd flows through both
directions of the transform.

Highpass subbands are stored as real tensors with an explicit real/imaginary
axis: ``highpasses[l]`` has shape ``[N, C, 6, 2, H / 2**(l+1), W / 2**(l+1)]``.
The lowpass keeps both trees interleaved and therefore sits at
``H / 2**(levels-1)``, one octave above the coarsest subband.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

__all__ = [
    "WaveletPyramid",
    "dtcwt_forward",
    "dtcwt_inverse",
    "pyramid_to_channels",
    "channels_to_pyramid",
]

# near_sym_b: Kingsbury's (13, 19)-tap near-symmetric biorthogonal filters.
H0O = [-0.0017578125, 0.0, 0.022265625, -0.046875, -0.0482421875, 0.296875,
       0.55546875, 0.296875, -0.0482421875, -0.046875, 0.022265625, 0.0,
       -0.0017578125]
G0O = [7.062639508928571e-05, 0.0, -0.0013419015066964285, -0.0018833705357142855,
       0.007156808035714285, 0.023856026785714284, -0.05564313616071428,
       -0.05168805803571428, 0.29975760323660716, 0.5594308035714286,
       0.29975760323660716, -0.05168805803571428, -0.05564313616071428,
       0.023856026785714284, 0.007156808035714285, -0.0018833705357142855,
       -0.0013419015066964285, 0.0, 7.062639508928571e-05]
H1O = [-v if i % 2 else v for i, v in enumerate(G0O)]
H1O = [-x for x in H1O]
G1O = [-v if i % 2 else v for i, v in enumerate(H0O)]

# qshift_b: 14-tap quarter-shift orthonormal filter; the rest follow by
# time reversal and alternating-sign modulation.
H0A = [0.003253142763653182, -0.00388321199915849, 0.03466034684485349,
       -0.03887280126882779, -0.11720388769911527, 0.27529538466888204,
       0.7561456438925225, 0.5688104207121227, 0.011866092033797,
       -0.1067118046866654, 0.023825384794920298, 0.01702522388155399,
       -0.005439475937274115, -0.004556895628475491]
H0B = H0A[::-1]
G0A = H0B
G0B = H0A
H1A = [-v if i % 2 else v for i, v in enumerate(H0A[::-1])]
H1B = H1A[::-1]
G1A = H1B
G1B = H1A


def _reflect(x: np.ndarray, minx: float, maxx: float) -> np.ndarray:
    rng = maxx - minx
    mod = np.fmod(x - minx, 2 * rng)
    mod = np.where(mod < 0, mod + 2 * rng, mod)
    out = np.where(mod >= rng, 2 * rng - mod, mod) + minx
    return out.astype(np.int64)


@functools.lru_cache(maxsize=None)
def _kernel(taps: tuple, dtype: torch.dtype) -> torch.Tensor:
    # conv2d correlates, the filter bank convolves
    return torch.tensor(taps[::-1], dtype=dtype).view(1, 1, -1, 1)


def _conv_rows(x: torch.Tensor, idx: np.ndarray, taps) -> torch.Tensor:
    """Gather rows ``idx`` of ``x`` ([B, H, W]) and apply a 'valid' column convolution."""
    g = x.index_select(-2, torch.from_numpy(idx))
    k = _kernel(tuple(taps), x.dtype)
    return F.conv2d(g.unsqueeze(1), k).squeeze(1)


def _colfilter(x: torch.Tensor, h) -> torch.Tensor:
    r = x.shape[-2]
    m2 = len(h) // 2
    xe = _reflect(np.arange(-m2, r + m2), -0.5, r - 0.5)
    return _conv_rows(x, xe, h)


def _interleave(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Rows a0, b0, a1, b1, ..."""
    s = torch.stack((a, b), dim=-2)
    return s.reshape(*a.shape[:-2], 2 * a.shape[-2], a.shape[-1])


def _coldfilt(x: torch.Tensor, ha, hb) -> torch.Tensor:
    r = x.shape[-2]
    if r % 4:
        raise ValueError("number of rows must be a multiple of 4")
    m = len(ha)
    xe = _reflect(np.arange(-m, r + m), -0.5, r - 0.5)
    t = np.arange(5, r + 2 * m - 2, 4)
    ya = _conv_rows(x, xe[t - 1], ha[0::2]) + _conv_rows(x, xe[t - 3], ha[1::2])
    yb = _conv_rows(x, xe[t], hb[0::2]) + _conv_rows(x, xe[t - 2], hb[1::2])
    if np.dot(ha, hb) > 0:
        return _interleave(ya, yb)
    return _interleave(yb, ya)


def _colifilt(x: torch.Tensor, ha, hb) -> torch.Tensor:
    r = x.shape[-2]
    if r % 2:
        raise ValueError("number of rows must be even")
    m = len(ha)
    m2 = m // 2
    xe = _reflect(np.arange(-m2, r + m2), -0.5, r - 0.5)
    hao, hae, hbo, hbe = ha[0::2], ha[1::2], hb[0::2], hb[1::2]
    if m2 % 2 == 0:
        t = np.arange(3, r + m, 2)
        ta, tb = (t, t - 1) if np.dot(ha, hb) > 0 else (t - 1, t)
        rows = [
            _conv_rows(x, xe[tb - 2], hae),
            _conv_rows(x, xe[ta - 2], hbe),
            _conv_rows(x, xe[tb], hao),
            _conv_rows(x, xe[ta], hbo),
        ]
    else:
        t = np.arange(2, r + m - 1, 2)
        ta, tb = (t, t - 1) if np.dot(ha, hb) > 0 else (t - 1, t)
        rows = [
            _conv_rows(x, xe[tb], hao),
            _conv_rows(x, xe[ta], hbo),
            _conv_rows(x, xe[tb], hae),
            _conv_rows(x, xe[ta], hbe),
        ]
    s = torch.stack(rows, dim=-2)
    return s.reshape(*x.shape[:-2], 2 * r, x.shape[-1])


def _t(x: torch.Tensor) -> torch.Tensor:
    return x.transpose(-1, -2)


_S = math.sqrt(0.5)


def _q2c(y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Quad of real samples -> pair of complex subbands, each as [..., 2, h, w]."""
    a, b = y[..., 0::2, 0::2], y[..., 0::2, 1::2]
    c, d = y[..., 1::2, 0::2], y[..., 1::2, 1::2]
    first = torch.stack(((a - d) * _S, (b + c) * _S), dim=-3)
    second = torch.stack(((a + d) * _S, (b - c) * _S), dim=-3)
    return first, second


def _c2q(w0: torch.Tensor, w1: torch.Tensor) -> torch.Tensor:
    pr = (w0[..., 0, :, :] + w1[..., 0, :, :]) * _S
    pi = (w0[..., 1, :, :] + w1[..., 1, :, :]) * _S
    qr = (w0[..., 0, :, :] - w1[..., 0, :, :]) * _S
    qi = (w0[..., 1, :, :] - w1[..., 1, :, :]) * _S
    top = torch.stack((pr, pi), dim=-1).flatten(-2)
    bottom = torch.stack((qi, -qr), dim=-1).flatten(-2)
    return _interleave(top, bottom)


@dataclass
class WaveletPyramid:
    lowpass: torch.Tensor
    highpasses: tuple

    @property
    def levels(self) -> int:
        return len(self.highpasses)

    def __add__(self, other: "WaveletPyramid") -> "WaveletPyramid":
        return WaveletPyramid(
            self.lowpass + other.lowpass,
            tuple(a + b for a, b in zip(self.highpasses, other.highpasses)),
        )


def dtcwt_forward(image: torch.Tensor, levels: int = 3) -> WaveletPyramid:
    """Decompose ``image`` ([C, H, W] or [N, C, H, W]) into a WaveletPyramid.

    H and W must be multiples of ``2**levels``. An unbatched input yields an
    unbatched pyramid.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    unbatched = image.dim() == 3
    x = image.unsqueeze(0) if unbatched else image
    if x.dim() != 4:
        raise ValueError(f"expected [C,H,W] or [N,C,H,W], got {tuple(image.shape)}")
    n, c, h, w = x.shape
    if h % (2 ** levels) or w % (2 ** levels):
        raise ValueError(f"H and W must be multiples of {2 ** levels}, got {h}x{w}")
    x = x.reshape(n * c, h, w)

    highs = []
    lo = _t(_colfilter(x, H0O))
    hi = _t(_colfilter(x, H1O))
    lolo = _t(_colfilter(lo, H0O))
    horiz = _q2c(_t(_colfilter(hi, H0O)))
    vert = _q2c(_t(_colfilter(lo, H1O)))
    diag = _q2c(_t(_colfilter(hi, H1O)))
    highs.append(_orient(horiz, vert, diag))

    for _ in range(1, levels):
        lo = _t(_coldfilt(lolo, H0B, H0A))
        hi = _t(_coldfilt(lolo, H1B, H1A))
        lolo = _t(_coldfilt(lo, H0B, H0A))
        horiz = _q2c(_t(_coldfilt(hi, H0B, H0A)))
        vert = _q2c(_t(_coldfilt(lo, H1B, H1A)))
        diag = _q2c(_t(_coldfilt(hi, H1B, H1A)))
        highs.append(_orient(horiz, vert, diag))

    lowpass = lolo.reshape(n, c, *lolo.shape[-2:])
    highs = [hp.reshape(n, c, *hp.shape[1:]) for hp in highs]
    if unbatched:
        lowpass = lowpass[0]
        highs = [hp[0] for hp in highs]
    return WaveletPyramid(lowpass, tuple(highs))


def _orient(horiz, vert, diag) -> torch.Tensor:
    # orientation order 15, 45, 75, 105, 135, 165 degrees
    return torch.stack((horiz[0], diag[0], vert[0], vert[1], diag[1], horiz[1]), dim=1)


def dtcwt_inverse(pyr: WaveletPyramid) -> torch.Tensor:
    """Reconstruct the image from a pyramid produced by :func:`dtcwt_forward`."""
    unbatched = pyr.lowpass.dim() == 3
    low = pyr.lowpass.unsqueeze(0) if unbatched else pyr.lowpass
    highs = [hp.unsqueeze(0) if unbatched else hp for hp in pyr.highpasses]
    n, c = low.shape[:2]
    for lvl, hp in enumerate(highs):
        expected = (n, c, 6, 2)
        if tuple(hp.shape[:4]) != expected:
            raise ValueError(f"highpass level {lvl + 1} has shape {tuple(hp.shape)}")
        if lvl and hp.shape[-2] * 2 != highs[lvl - 1].shape[-2]:
            raise ValueError("highpass sizes must halve per level")
    if low.shape[-2] != 2 * highs[-1].shape[-2] or low.shape[-1] != 2 * highs[-1].shape[-1]:
        raise ValueError("lowpass does not match the coarsest highpass level")

    z = low.reshape(n * c, *low.shape[-2:])
    hs = [hp.reshape(n * c, *hp.shape[2:]) for hp in highs]
    for lvl in range(len(hs) - 1, 0, -1):
        b = hs[lvl]
        lh = _c2q(b[:, 0], b[:, 5])
        hl = _c2q(b[:, 2], b[:, 3])
        hh = _c2q(b[:, 1], b[:, 4])
        y1 = _colifilt(z, G0B, G0A) + _colifilt(lh, G1B, G1A)
        y2 = _colifilt(hl, G0B, G0A) + _colifilt(hh, G1B, G1A)
        z = _t(_colifilt(_t(y1), G0B, G0A) + _colifilt(_t(y2), G1B, G1A))
    b = hs[0]
    lh = _c2q(b[:, 0], b[:, 5])
    hl = _c2q(b[:, 2], b[:, 3])
    hh = _c2q(b[:, 1], b[:, 4])
    y1 = _colfilter(z, G0O) + _colfilter(lh, G1O)
    y2 = _colfilter(hl, G0O) + _colfilter(hh, G1O)
    z = _t(_colfilter(_t(y1), G0O) + _colfilter(_t(y2), G1O))
    out = z.reshape(n, c, *z.shape[-2:])
    return out[0] if unbatched else out


def pyramid_to_channels(pyr: WaveletPyramid) -> list[torch.Tensor]:
    """Flatten a batched pyramid into per-level real feature maps.

    Returns ``[level1, level2, ..., lowpass]`` where level ``l`` has
    ``12 * C`` channels (6 orientations x real/imag per input channel).
    """
    out = [hp.flatten(1, 3) for hp in pyr.highpasses]
    out.append(pyr.lowpass)
    return out


def channels_to_pyramid(feats: list[torch.Tensor], channels: int) -> WaveletPyramid:
    """Inverse of :func:`pyramid_to_channels`."""
    highs = tuple(f.unflatten(1, (channels, 6, 2)) for f in feats[:-1])
    return WaveletPyramid(feats[-1], highs)
