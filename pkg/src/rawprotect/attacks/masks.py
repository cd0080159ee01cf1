"""Free-form tamper masks: random brush strokes and rectangles."""
from __future__ import annotations

import cv2
import numpy as np
import torch


def _draw_center(h, w, rng, margin):
    mh, mw = margin * h, margin * w
    while True:
        y, x = rng.uniform(0, h), rng.uniform(0, w)
        in_corner = (y < mh or y > h - mh) and (x < mw or x > w - mw)
        if not in_corner:
            return y, x


def _stroke(canvas, h, w, rng, margin):
    y, x = _draw_center(h, w, rng, margin)
    short = min(h, w)
    width = max(1, int(round(rng.uniform(0.02, 0.08) * short)))
    for _ in range(rng.integers(1, 6)):
        angle = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(0.05, 0.25) * short
        ny = float(np.clip(y + length * np.sin(angle), 0, h - 1))
        nx = float(np.clip(x + length * np.cos(angle), 0, w - 1))
        cv2.line(canvas, (int(x), int(y)), (int(nx), int(ny)), 1, width)
        cv2.circle(canvas, (int(nx), int(ny)), width // 2, 1, -1)
        y, x = ny, nx


def _rectangle(canvas, h, w, rng, margin):
    y, x = _draw_center(h, w, rng, margin)
    rh, rw = rng.uniform(0.03, 0.2) * h, rng.uniform(0.03, 0.2) * w
    y0, y1 = int(max(0, y - rh)), int(min(h, y + rh))
    x0, x1 = int(max(0, x - rw)), int(min(w, x + rw))
    canvas[y0:y1, x0:x1] = 1


def generate_freeform_mask(h: int, w: int, area_range=(0.0, 0.3), rng=None,
                           margin: float = 0.05, max_tries: int = 200) -> torch.Tensor:
    """Binary mask [1, H, W] whose area fraction lies in ``area_range``.

    A target area is drawn uniformly from the range; shapes are added until
    the target is reached, and any shape that would push the area above the
    upper bound is discarded.
    """
    lo, hi = (float(v) for v in area_range)
    if not 0 <= lo <= hi <= 1:
        raise ValueError(f"invalid area range {area_range}")
    if h < 4 or w < 4:
        raise ValueError(f"mask dims too small: {h}x{w}")
    rng = rng if rng is not None else np.random.default_rng()
    mask = np.zeros((h, w), np.uint8)
    if hi == 0:
        return torch.zeros(1, h, w)
    target = max(rng.uniform(lo, hi), 1.0 / (h * w))
    area, tries = 0.0, 0
    while area < target and tries < max_tries:
        cand = mask.copy()
        if rng.random() < 0.6:
            _stroke(cand, h, w, rng, margin)
        else:
            _rectangle(cand, h, w, rng, margin)
        cand_area = float(cand.mean())
        if cand_area > hi:
            tries += 1
            continue
        mask, area = cand, cand_area
    if area < lo:
        raise ValueError(f"could not reach area {lo} within {hi} on a {h}x{w} grid")
    return torch.from_numpy(mask.astype(np.float32))[None]
