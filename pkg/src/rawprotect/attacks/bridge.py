"""Stop-gradient bridge: real-world attack values with simulated gradients.

``x = syn + sg(real - syn)`` evaluates to the real 8-bit result while the
backward pass sees only ``syn``.
"""
from __future__ import annotations

import numpy as np
import torch

from .distortions import DISTORTION_KINDS, distort_real

REAL_KINDS = ("quantize",) + DISTORTION_KINDS


def to_uint8_hwc(img: torch.Tensor) -> np.ndarray:
    """[3, H, W] float in [0, 1] -> HxWx3 uint8 with round-half-to-even."""
    x = img.detach().cpu().double().clamp(0, 1).numpy()
    return np.rint(x * 255).astype(np.uint8).transpose(1, 2, 0)


def from_uint8_hwc(arr: np.ndarray, like: torch.Tensor) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))
    return (t.double() / 255).to(dtype=like.dtype, device=like.device)


def quantize(img: torch.Tensor) -> torch.Tensor:
    """Value of the 8-bit round trip ``round(x * 255) / 255`` (no gradient)."""
    return (torch.round(img.detach().double().clamp(0, 1) * 255) / 255).to(img.dtype)


def real_attack(img: torch.Tensor, kind: str, params: dict | None = None) -> torch.Tensor:
    """Quantize to 8 bits and run the integer-image version of ``kind``."""
    if kind not in REAL_KINDS:
        raise ValueError(f"{kind!r} has no real-world counterpart")
    if kind == "quantize":
        return quantize(img)
    unbatched = img.dim() == 3
    x = img[None] if unbatched else img
    out = torch.stack([from_uint8_hwc(distort_real(to_uint8_hwc(s), kind, params), s) for s in x])
    return out[0] if unbatched else out


def real_bridge(syn: torch.Tensor, kind: str = "quantize", params: dict | None = None,
                real_input: torch.Tensor | None = None) -> torch.Tensor:
    """Forward: the real attack; backward: identity into ``syn``.

    ``real_input`` is the pre-attack image fed to the real route; by default
    the real op is applied to ``syn`` itself.
    """
    real = real_attack(syn if real_input is None else real_input, kind, params)
    # real + (syn - sg(syn)) is bit-exactly ``real`` in the forward pass
    return real + (syn - syn.detach())
