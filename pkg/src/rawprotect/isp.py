"""RAW -> RGB rendering: a fixed conventional pipeline and a small learnable surrogate."""
from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imaging import (IspParams, RawImage, RgbImage, _unwrap, apply_ccm, apply_gamma,
                      cfa_masks, demosaic_bilinear)

log = logging.getLogger(__name__)


def conventional_isp(raw, params: IspParams | None = None, pattern: str | None = None):
    """White balance per Bayer site, bilinear demosaic, colour matrix, gamma, clamp."""
    params = params or IspParams()
    if isinstance(raw, RawImage):
        pattern = raw.pattern
    pattern = pattern or "RGGB"
    x = _unwrap(raw)
    h, w = x.shape[-2:]
    gains = torch.tensor(params.wb_gains, dtype=x.dtype, device=x.device).view(3, 1, 1)
    gain_map = (cfa_masks(pattern, h, w, x.dtype).to(x.device) * gains).sum(0, keepdim=True)
    rgb = demosaic_bilinear(x * gain_map, pattern)
    rgb = apply_ccm(rgb, params.ccm)
    rgb = apply_gamma(rgb, params).clamp(0, 1)
    if isinstance(raw, RawImage):
        return RgbImage(rgb)
    return rgb


class LearnableIsp(nn.Module):
    """Three-layer convolutional refiner on top of the bilinear demosaic.

    The last layer starts at zero, so an untrained surrogate renders exactly
    ``demosaic_bilinear(raw)``.
    """

    def __init__(self, width: int = 16, pattern: str = "RGGB"):
        super().__init__()
        self.pattern = pattern
        self.width = width
        self.conv1 = nn.Conv2d(3, width, 3, padding=1, padding_mode="replicate")
        self.conv2 = nn.Conv2d(width, width, 3, padding=1, padding_mode="replicate")
        self.conv3 = nn.Conv2d(width, 3, 3, padding=1, padding_mode="replicate")
        nn.init.zeros_(self.conv3.weight)
        nn.init.zeros_(self.conv3.bias)

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        base = demosaic_bilinear(raw, self.pattern)
        y = F.gelu(self.conv1(base))
        y = F.gelu(self.conv2(y))
        return (base + self.conv3(y)).clamp(0, 1)


def pretrain_learnable_isp(raws, params: IspParams | None = None, steps: int = 500,
                           lr: float = 1e-2, batch_size: int = 8, seed: int = 0,
                           surrogate: LearnableIsp | None = None):
    """Fit a surrogate to the conventional renders with an l1 objective.

    Returns ``(surrogate, history)`` where ``history`` holds the per-step loss.
    """
    params = params or IspParams()
    if len(raws) == 0:
        raise ValueError("pretraining needs at least one RAW image")
    if len(raws) < 8:
        log.warning("pretraining on only %d raws", len(raws))
    data = torch.stack([_unwrap(r) for r in raws])
    pattern = raws[0].pattern if isinstance(raws[0], RawImage) else "RGGB"
    torch.manual_seed(seed)
    model = surrogate or LearnableIsp(pattern=pattern)
    with torch.no_grad():
        target = conventional_isp(data, params, pattern)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(steps, 1), eta_min=lr * 0.05)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(steps):
        idx = torch.from_numpy(rng.choice(len(data), size=min(batch_size, len(data)), replace=False))
        loss = (model(data[idx]) - target[idx]).abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        history.append(loss.item())
    if history:
        log.info("surrogate pretraining: final l1 %.4f", history[-1])
    return model, history


def mix_render(raw: torch.Tensor, params: IspParams, surrogate: nn.Module, omega,
               pattern: str = "RGGB") -> torch.Tensor:
    """Convex blend ``omega * conventional + (1 - omega) * surrogate``.

    ``omega`` is a scalar or a per-sample tensor of shape [N]. The conventional
    render carries no gradient.
    """
    x = _unwrap(raw)
    om = torch.as_tensor(omega, dtype=x.dtype, device=x.device)
    if ((om < 0) | (om > 1)).any():
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    if om.dim() == 1:
        om = om.view(-1, *([1] * (x.dim() - 1)))
    with torch.no_grad():
        conv = conventional_isp(x.detach(), params, pattern)
    net = surrogate(x)
    return om * conv + (1 - om) * net
