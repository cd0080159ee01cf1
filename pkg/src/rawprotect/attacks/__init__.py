"""Hybrid attack layer: tampering, distortions, colour edits, crops and the real-world bridge."""
from .bridge import quantize, real_attack, real_bridge
from .distortions import (COLOR_KINDS, DISTORTION_KINDS, apply_crop, awgn, color_adjust,
                          crop_window, distort, distort_real, gaussian_blur, median_blur,
                          random_crop, rescale)
from .jpeg import diff_jpeg, from_uint8, jpeg_codec, quant_table, to_uint8
from .masks import generate_freeform_mask
from .pipeline import (MODULES, AttackConfig, AttackedSample, HybridAttack, apply_distortion,
                       attack_pipeline, draw_color, draw_distortion, draw_schedule)
from .tamper import TAMPER_KINDS, apply_tamper, copy_move_source, make_source, naive_inpaint

__all__ = [
    "AttackConfig", "AttackedSample", "COLOR_KINDS", "DISTORTION_KINDS", "HybridAttack", "MODULES",
    "TAMPER_KINDS", "apply_crop", "apply_distortion", "apply_tamper", "attack_pipeline", "awgn",
    "color_adjust", "copy_move_source", "crop_window", "diff_jpeg", "distort", "distort_real",
    "draw_color", "draw_distortion", "draw_schedule", "from_uint8", "gaussian_blur",
    "generate_freeform_mask", "jpeg_codec", "make_source", "median_blur", "naive_inpaint",
    "quant_table", "quantize", "random_crop", "real_attack", "real_bridge", "rescale", "to_uint8",
]
