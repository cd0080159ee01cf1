"""Tampering by compositing a manipulation source into the protected image."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

TAMPER_KINDS = ("splice", "coincident_splice", "copy_move", "inpaint")


def apply_tamper(img: torch.Tensor, mask: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
    """``img * (1 - mask) + source * mask``; bit-exact for binary masks."""
    if img.shape != source.shape or img.shape[-2:] != mask.shape[-2:]:
        raise ValueError(f"shape mismatch: img {tuple(img.shape)}, mask {tuple(mask.shape)}, "
                         f"source {tuple(source.shape)}")
    return img * (1 - mask) + source * mask


@torch.no_grad()
def naive_inpaint(img: torch.Tensor, mask: torch.Tensor, iterations: int = 200) -> torch.Tensor:
    """Fill masked pixels by Jacobi diffusion from the unmasked surroundings."""
    if bool((mask >= 0.5).all()):
        raise ValueError("cannot inpaint a fully masked image")
    unbatched = img.dim() == 3
    x = img[None] if unbatched else img
    m = (mask[None] if mask.dim() == 3 else mask).to(x.dtype)
    m = m.expand(x.shape[0], 1, *x.shape[-2:])
    known = 1 - m
    # start from the mean of the known pixels
    mean = (x * known).sum((-2, -1), keepdim=True) / known.sum((-2, -1), keepdim=True).clamp_min(1)
    cur = x * known + mean * m
    k = torch.tensor([[0.0, 0.25, 0.0], [0.25, 0.0, 0.25], [0.0, 0.25, 0.0]], dtype=x.dtype)
    k = k.view(1, 1, 3, 3).repeat(x.shape[1], 1, 1, 1)
    for _ in range(iterations):
        avg = F.conv2d(F.pad(cur, (1, 1, 1, 1), mode="replicate"), k, groups=x.shape[1])
        cur = x * known + avg * m
    return cur[0] if unbatched else cur


def copy_move_source(img: torch.Tensor, rng: np.random.Generator):
    """Circular shift by a random offset in [16, size/2] along each axis."""
    h, w = img.shape[-2:]
    dy = int(rng.integers(16, max(17, h // 2 + 1)))
    dx = int(rng.integers(16, max(17, w // 2 + 1)))
    return torch.roll(img, shifts=(dy, dx), dims=(-2, -1)), {"shift": [dy, dx]}


def make_source(img, mask, kind, rng, splice_pool=None, protected_pool=None, inpainter=None):
    """Build the manipulation source for ``kind``; returns ``(source, params)``."""
    if kind == "splice":
        if not splice_pool:
            raise ValueError("splicing needs a pool of unrelated images")
        i = int(rng.integers(len(splice_pool)))
        return splice_pool[i], {"pool_index": i}
    if kind == "coincident_splice":
        if not protected_pool:
            raise ValueError("coincident splicing needs a pool of protected images")
        i = int(rng.integers(len(protected_pool)))
        return protected_pool[i], {"pool_index": i}
    if kind == "copy_move":
        return copy_move_source(img, rng)
    if kind == "inpaint":
        fill = (inpainter or naive_inpaint)(img.detach(), mask)
        return fill, {"inpainter": getattr(inpainter, "__name__", "naive_inpaint")}
    raise ValueError(f"unknown tamper kind {kind!r}")
