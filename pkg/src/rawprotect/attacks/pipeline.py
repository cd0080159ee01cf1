"""Stochastic hybrid attack: tamper, colour, distortion and crop modules.

Each module fires independently with probability ``p_activate`` and the
active ones run in a random order. When both tamper and crop fire, crop is
moved to the end so the ground-truth mask only ever sees one geometric
transform. Distortions go through the stop-gradient bridge, and the final
image is quantized to 8 bits the same way.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from .bridge import real_bridge
from .distortions import (COLOR_KINDS, DISTORTION_KINDS, apply_crop, color_adjust, crop_window,
                          distort)
from .masks import generate_freeform_mask
from .tamper import TAMPER_KINDS, apply_tamper, make_source

MODULES = ("tamper", "color", "distortion", "crop")


def _pair(v):
    lo, hi = (float(x) for x in v)
    return (lo, hi)


@dataclass
class AttackConfig:
    p_activate: float = 0.85
    area_range: tuple = (0.0, 0.3)
    rescale_range: tuple = (0.5, 1.5)
    median_kernels: tuple = (3, 5)
    awgn_sigma_range: tuple = (0.0, 3 / 255)
    gblur_kernels: tuple = (3, 5)
    gblur_sigma_range: tuple = (0.8, 1.6)
    jpeg_quality_range: tuple = (50, 95)
    hue_range: tuple = (-0.05, 0.05)
    contrast_range: tuple = (0.7, 1.5)
    saturation_range: tuple = (0.7, 1.5)
    brightness_range: tuple = (0.7, 1.5)
    crop_survival_range: tuple = (0.49, 1.0)
    quantize_output: bool = True

    def __post_init__(self):
        if not 0 <= self.p_activate <= 1:
            raise ValueError(f"p_activate must lie in [0, 1], got {self.p_activate}")
        for f in fields(self):
            if f.name.endswith("_range"):
                lo, hi = _pair(getattr(self, f.name))
                if lo > hi:
                    raise ValueError(f"{f.name} is not ordered: [{lo}, {hi}]")
                setattr(self, f.name, (lo, hi))
        lo, hi = self.area_range
        if lo < 0 or hi > 1:
            raise ValueError(f"area_range must lie within [0, 1], got {self.area_range}")
        if self.crop_survival_range[0] < 0.49 or self.crop_survival_range[1] > 1:
            raise ValueError("crop_survival_range must lie within [0.49, 1]")
        if self.rescale_range[0] <= 0:
            raise ValueError("rescale rates must be positive")
        if self.awgn_sigma_range[0] < 0:
            raise ValueError("AWGN sigma must be non-negative")
        q0, q1 = self.jpeg_quality_range
        if not (1 <= q0 and q1 <= 100 and q0 == int(q0) and q1 == int(q1)):
            raise ValueError(f"jpeg_quality_range must be integers in 1..100, got {self.jpeg_quality_range}")
        for name in ("median_kernels", "gblur_kernels"):
            ks = tuple(int(k) for k in getattr(self, name))
            if not ks or any(k < 1 or k % 2 == 0 for k in ks):
                raise ValueError(f"{name} must be positive odd integers, got {ks}")
            setattr(self, name, ks)
        for kind, lim in (("hue", (-0.5, 0.5)), ("contrast", (0, None)),
                          ("saturation", (0, None)), ("brightness", (0, None))):
            lo, hi = getattr(self, f"{kind}_range")
            if lo < lim[0] or (lim[1] is not None and hi > lim[1]):
                raise ValueError(f"{kind}_range out of bounds: {(lo, hi)}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class AttackedSample:
    """Attacked image [3, H, W], ground-truth mask [1, H, W] and provenance."""

    image: torch.Tensor
    gt_mask: torch.Tensor
    tampered: bool
    applied: list = field(default_factory=list)
    # pre-crop compositing inputs, kept for audits; not serialized
    source: torch.Tensor | None = None
    tamper_mask: torch.Tensor | None = None

    def provenance(self) -> str:
        return json.dumps({"tampered": self.tampered,
                           "applied": [{"module": m, "params": p} for m, p in self.applied]},
                          sort_keys=True)

    def to_bytes(self) -> bytes:
        img = self.image.detach().cpu().numpy().tobytes()
        mask = self.gt_mask.detach().cpu().numpy().tobytes()
        return img + mask + self.provenance().encode()


def _uniform(rng, bounds) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def draw_distortion(cfg: AttackConfig, rng, kind: str | None = None):
    kind = kind or DISTORTION_KINDS[int(rng.integers(len(DISTORTION_KINDS)))]
    if kind == "rescale":
        return kind, {"rate": _uniform(rng, cfg.rescale_range)}
    if kind == "median_blur":
        return kind, {"k": int(rng.choice(cfg.median_kernels))}
    if kind == "gaussian_blur":
        return kind, {"k": int(rng.choice(cfg.gblur_kernels)),
                      "sigma": _uniform(rng, cfg.gblur_sigma_range)}
    if kind == "awgn":
        return kind, {"sigma": _uniform(rng, cfg.awgn_sigma_range),
                      "seed": int(rng.integers(2 ** 31))}
    if kind == "jpeg":
        q0, q1 = (int(q) for q in cfg.jpeg_quality_range)
        return kind, {"quality": int(rng.integers(q0, q1 + 1))}
    raise ValueError(f"unknown distortion {kind!r}")


def draw_color(cfg: AttackConfig, rng):
    kind = COLOR_KINDS[int(rng.integers(len(COLOR_KINDS)))]
    return kind, _uniform(rng, getattr(cfg, f"{kind}_range"))


def draw_schedule(cfg: AttackConfig, rng, force: dict | None = None) -> list:
    """Active modules in execution order; ``force`` pins modules on or off."""
    active = {m: bool(rng.random() < cfg.p_activate) for m in MODULES}
    unknown = set(force or {}) - set(MODULES)
    if unknown:
        raise ValueError(f"unknown attack modules {sorted(unknown)}")
    active.update(force or {})
    order = [MODULES[i] for i in rng.permutation(len(MODULES)) if active[MODULES[i]]]
    if active["tamper"] and active["crop"]:
        order.remove("crop")
        order.append("crop")
    return order


def apply_distortion(img: torch.Tensor, kind: str, params: dict) -> torch.Tensor:
    """Real-world value, simulated gradient."""
    return real_bridge(distort(img, kind, params), kind, params, real_input=img)


def attack_pipeline(img: torch.Tensor, protected_pool, cfg: AttackConfig, rng: np.random.Generator,
                    splice_pool=None, tamper_kind: str | None = None, force: dict | None = None,
                    inpainter=None) -> AttackedSample:
    """Attack one [3, H, W] image; see the module docstring for the scheme.

    ``tamper_kind`` fixes the manipulation (otherwise drawn uniformly).
    ``splice_pool`` defaults to ``protected_pool`` when absent.
    """
    h, w = img.shape[-2:]
    mask = torch.zeros(1, h, w, dtype=img.dtype, device=img.device)
    x, applied = img, []
    source = tamper_mask = None
    for module in draw_schedule(cfg, rng, force):
        if module == "tamper":
            kind = tamper_kind or TAMPER_KINDS[int(rng.integers(len(TAMPER_KINDS)))]
            mask = generate_freeform_mask(h, w, cfg.area_range, rng).to(img)
            source, params = make_source(x, mask, kind, rng, splice_pool or protected_pool,
                                         protected_pool, inpainter)
            x = apply_tamper(x, mask, source)
            tamper_mask = mask
            applied.append(("tamper", {"kind": kind, "area": float(mask.mean()), **params}))
        elif module == "color":
            kind, factor = draw_color(cfg, rng)
            x = color_adjust(x, kind, factor)
            applied.append(("color", {"kind": kind, "factor": factor}))
        elif module == "distortion":
            kind, params = draw_distortion(cfg, rng)
            x = apply_distortion(x, kind, params)
            applied.append(("distortion", {"kind": kind, **params}))
        else:
            survival = _uniform(rng, cfg.crop_survival_range)
            window = crop_window(h, w, survival, rng)
            x, mask = apply_crop(x, mask, window)
            applied.append(("crop", {"survival": survival, "window": list(window)}))
    if cfg.quantize_output:
        x = real_bridge(x, "quantize")
        applied.append(("quantize", {}))
    tampered = bool((mask > 0.5).any())
    return AttackedSample(x, mask, tampered, applied, source, tamper_mask)


class HybridAttack:
    """Attack scheduler that cycles tamper kinds evenly across calls."""

    def __init__(self, cfg: AttackConfig | None = None, kinds=TAMPER_KINDS, inpainter=None):
        self.cfg = cfg or AttackConfig()
        self.kinds = tuple(kinds)
        if not self.kinds or set(self.kinds) - set(TAMPER_KINDS):
            raise ValueError(f"tamper kinds must be drawn from {TAMPER_KINDS}")
        self.inpainter = inpainter
        self.counter = 0

    def next_kind(self) -> str:
        kind = self.kinds[self.counter % len(self.kinds)]
        self.counter += 1
        return kind

    def __call__(self, img, protected_pool, rng, splice_pool=None, force=None) -> AttackedSample:
        kind = self.next_kind() if (force or {}).get("tamper", True) else None
        return attack_pipeline(img, protected_pool, self.cfg, rng, splice_pool, kind, force,
                               self.inpainter)
