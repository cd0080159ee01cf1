"""Protect, render, tamper and detect: a small end-to-end walkthrough.

Trains a toy protector and detector for a few steps on procedural RAWs, then
follows one image through the pipeline and prints what happens at each stage.
The run is far too short to localize anything reliably; it shows the data flow
and the numbers to watch, not a converged model.

    python demos/walkthrough.py --steps 40 --out /tmp/walkthrough
"""
import argparse
import logging
from pathlib import Path

import numpy as np
import torch

from rawprotect.attacks import AttackConfig, attack_pipeline
from rawprotect.imaging import demosaic_bilinear, mosaic, synthetic_raw_corpus
from rawprotect.isp import conventional_isp, mix_render
from rawprotect.metrics import psnr, seg_metrics
from rawprotect.mpfnet import MpfConfig, count_parameters
from rawprotect.training import TrainConfig, as_tensor_batch, load_state, pretrain_surrogates, train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--out", type=Path, default=Path("walkthrough"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    # 1. procedural Bayer RAWs stand in for a camera corpus
    data = as_tensor_batch(synthetic_raw_corpus(16, 64, seed=0))
    print(f"training RAWs: {tuple(data.shape)}  (RGGB, values in [0, 1])")

    # 2. surrogate ISPs, then joint training of protector and detector
    cfg = TrainConfig(steps=args.steps, crop_size=64, run_name="toy", ckpt_every=args.steps)
    surrogates = pretrain_surrogates(data, cfg, steps=100)
    ckpt = train(cfg, data, out_dir=args.out, surrogates=surrogates,
                 mpf_cfg=MpfConfig(c_f=16, n_blocks=4), detector_cfg={"base": 16, "stages": 3},
                 log_every=10)
    state, _ = load_state(ckpt)
    state.protector.eval()
    state.detector.eval()
    print(f"checkpoint: {ckpt}  protector parameters: {count_parameters(state.protector)}")

    # 3. protect one unseen RAW and render it with both ISP branches
    raw = as_tensor_batch(synthetic_raw_corpus(2, 64, seed=99))
    with torch.no_grad():
        protected = mosaic(state.protector(demosaic_bilinear(raw))).clamp(0, 1)
        for omega, name in ((1.0, "conventional"), (0.0, "learnable")):
            ref = mix_render(raw, state.isp_params, state.surrogates[0], omega)
            out = mix_render(protected, state.isp_params, state.surrogates[0], omega)
            print(f"{name:>12} render: PSNR(original, protected) = {psnr(ref, out.clamp(0, 1)):.2f} dB")
        rgb = conventional_isp(protected, state.isp_params).clamp(0, 1)
        donor = conventional_isp(raw.flip(0), state.isp_params).clamp(0, 1)

    # 4. splice a region from another image, then apply one random distortion
    rng = np.random.default_rng(0)
    sample = attack_pipeline(rgb[0], [donor[0]], AttackConfig(), rng, tamper_kind="splice",
                             force={"tamper": True, "color": False, "crop": False,
                                    "distortion": True})
    print("applied:", ", ".join(m if m != "distortion" else f"{m}:{p['kind']}"
                                for m, p in sample.applied))
    print(f"tampered area: {float(sample.gt_mask.mean()):.3f}")

    # 5. localize
    with torch.no_grad():
        prob = torch.sigmoid(state.detector(sample.image[None]))[0]
    recall, f1, iou = seg_metrics(prob, sample.gt_mask)
    print(f"detector: recall {recall:.3f}  F1 {f1:.3f}  IoU {iou:.3f}  "
          f"predicted area {float((prob > 0.5).float().mean()):.3f}")


if __name__ == "__main__":
    main()
