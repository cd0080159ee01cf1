"""Tamper localization networks and their BCE supervision."""
from __future__ import annotations

import json
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .mpfnet import count_parameters, save_checkpoint

_REGISTRY: dict = {}


def register_detector(name: str):
    """Class decorator adding a detector under ``name``."""
    def wrap(cls):
        if name in _REGISTRY:
            raise ValueError(f"detector {name!r} is already registered")
        _REGISTRY[name] = cls
        cls.architecture_id = name
        return cls
    return wrap


def available_detectors() -> list:
    return sorted(_REGISTRY)


def build_detector(architecture_id: str = "unet", **kwargs) -> nn.Module:
    try:
        cls = _REGISTRY[architecture_id]
    except KeyError:
        raise ValueError(f"unknown detector {architecture_id!r}; "
                         f"available: {available_detectors()}") from None
    return cls(**kwargs)


class DoubleConv(nn.Sequential):
    def __init__(self, c_in: int, c_out: int, groups: int = 8):
        super().__init__(
            nn.Conv2d(c_in, c_out, 3, padding=1), nn.GroupNorm(groups, c_out), nn.GELU(),
            nn.Conv2d(c_out, c_out, 3, padding=1), nn.GroupNorm(groups, c_out), nn.GELU())


@register_detector("unet")
class UNetDetector(nn.Module):
    """U-shaped segmenter: four resolution stages, skip connections, one logit channel.

    GroupNorm instead of BatchNorm keeps every sample's prediction
    independent of the rest of the batch.
    """

    def __init__(self, base: int = 32, stages: int = 4, in_channels: int = 3):
        super().__init__()
        widths = [base * 2 ** i for i in range(stages)]
        self.stages = stages
        self.encoders = nn.ModuleList()
        c = in_channels
        for wd in widths:
            self.encoders.append(DoubleConv(c, wd))
            c = wd
        self.decoders = nn.ModuleList(
            DoubleConv(widths[i + 1] + widths[i], widths[i]) for i in reversed(range(stages - 1)))
        self.head = nn.Conv2d(widths[0], 1, 1)
        self.config = {"base": base, "stages": stages, "in_channels": in_channels}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        unbatched = x.dim() == 3
        if unbatched:
            x = x[None]
        h, w = x.shape[-2:]
        if h % 16 or w % 16:
            raise ValueError(f"detector input must be a multiple of 16, got {h}x{w}")
        skips = []
        for i, enc in enumerate(self.encoders):
            x = enc(x if i == 0 else F.max_pool2d(x, 2))
            skips.append(x)
        skips.pop()
        for dec in self.decoders:
            skip = skips.pop()
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = dec(torch.cat((x, skip), dim=1))
        out = self.head(x)
        return out[0] if unbatched else out


def localization_losses(logits: torch.Tensor, gt_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Per-pixel mean BCE against ``gt_mask``; ``None`` means an authentic image (all zeros)."""
    if gt_mask is None:
        target = torch.zeros_like(logits)
    else:
        if gt_mask.shape != logits.shape:
            raise ValueError(f"mask shape {tuple(gt_mask.shape)} != logits {tuple(logits.shape)}")
        if not bool(((gt_mask == 0) | (gt_mask == 1)).all()):
            raise ValueError("ground-truth mask must be binary")
        target = gt_mask.to(logits.dtype)
    return F.binary_cross_entropy_with_logits(logits, target)


def save_detector(model: nn.Module, directory) -> Path:
    cfg = {"architecture_id": model.architecture_id, **model.config}
    return save_checkpoint(model, directory, cfg, "detector")


def load_detector(directory) -> nn.Module:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("kind") != "detector":
        raise ValueError(f"{directory} does not hold a detector checkpoint")
    cfg = dict(manifest["config"])
    model = build_detector(cfg.pop("architecture_id"), **cfg)
    model.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
    if count_parameters(model) != manifest["parameter_count"]:
        raise ValueError("parameter count does not match the manifest")
    return model
