"""Joint training of the protection network and the detector.

Modes:
    draw         protect the RAW, render, attack, detect (full objective)
    robust_only  no protection; the detector learns from attacked renders alone
    rgb_protect  protect the rendered RGB instead of the RAW
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .attacks import AttackConfig, HybridAttack
from .detector import build_detector, load_detector, localization_losses, save_detector
from .imaging import IspParams, RawImage, demosaic_bilinear, mosaic
from .isp import LearnableIsp, mix_render, pretrain_learnable_isp
from .metrics import psnr, seg_metrics
from .mpfnet import MPFNet, MpfConfig, count_parameters, load_mpfnet, save_mpfnet

log = logging.getLogger(__name__)

MODES = ("draw", "robust_only", "rgb_protect")
_WEIGHTS = {"draw": (10.0, 1.0, 0.02, 0.01), "robust_only": (10.0, 1.0, 0.02, 0.01),
            "rgb_protect": (0.0, 1.0, 0.01, 0.005)}


@dataclass
class TrainConfig:
    mode: str = "draw"
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    epsilon: float | None = None
    lr: float = 1e-4
    batch_size: int = 4
    steps: int = 2000
    seed: int = 0
    n_isp_surrogates: int = 2
    crop_size: int = 128
    tamper_fraction: float = 0.5
    clip_norm: float = 1.0
    ckpt_every: int = 500
    run_name: str = "desk"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        defaults = _WEIGHTS[self.mode]
        for name, value in zip(("alpha", "beta", "gamma", "epsilon"), defaults):
            if getattr(self, name) is None:
                setattr(self, name, value)
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (tampered and authentic halves)")
        if self.n_isp_surrogates < 1:
            raise ValueError("need at least one ISP surrogate")
        if self.crop_size % 16:
            raise ValueError(f"crop_size must be a multiple of 16, got {self.crop_size}")
        if not 0 < self.tamper_fraction < 1:
            raise ValueError("tamper_fraction must lie strictly between 0 and 1")


@dataclass
class TrainState:
    protector: MPFNet | None
    detector: torch.nn.Module
    surrogates: list
    optimizer: torch.optim.Optimizer
    attack: HybridAttack
    rng: np.random.Generator
    isp_params: IspParams = field(default_factory=IspParams)
    step: int = 0
    mode: str = "draw"


def fidelity_losses(raw, raw_hat, rgb, rgb_hat):
    """Mean l1 in the RAW and in the rendered RGB domain (either pair may be None)."""
    out = []
    for a, b in ((raw, raw_hat), (rgb, rgb_hat)):
        if a is None or b is None:
            out.append(None)
            continue
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        out.append((a - b).abs().mean())
    return tuple(out)


def total_loss(l_raw, l_rgb, l_t, l_nt, cfg: TrainConfig):
    """alpha L_raw + beta L_rgb + gamma L_t + epsilon L_nt; ``None`` terms are dropped."""
    terms = {"raw": (cfg.alpha, l_raw), "rgb": (cfg.beta, l_rgb),
             "tampered": (cfg.gamma, l_t), "authentic": (cfg.epsilon, l_nt)}
    if cfg.mode == "rgb_protect":
        terms["raw"] = (0.0, None)
    vals = {k: float(v.detach() if torch.is_tensor(v) else v)
            for k, (_, v) in terms.items() if v is not None}
    bad = {k: v for k, v in vals.items() if not math.isfinite(v)}
    if bad:
        raise FloatingPointError(f"non-finite loss components: {bad}")
    weighted = [w * v for w, v in terms.values() if v is not None and w]
    if not any(torch.is_tensor(t) for t in weighted):
        return math.fsum(weighted)  # correctly rounded for plain numbers
    total = 0.0
    for t in weighted:
        total = total + t
    return total


def init_state(cfg: TrainConfig, surrogates: list, mpf_cfg: MpfConfig | None = None,
               attack_cfg: AttackConfig | None = None, isp_params: IspParams | None = None,
               detector_cfg: dict | None = None) -> TrainState:
    """Fresh networks and optimizer; ``detector_cfg`` holds ``architecture_id`` and kwargs."""
    torch.manual_seed(cfg.seed)
    protector = None if cfg.mode == "robust_only" else MPFNet(mpf_cfg or MpfConfig())
    detector_cfg = dict(detector_cfg or {})
    detector = build_detector(detector_cfg.pop("architecture_id", "unet"), **detector_cfg)
    for s in surrogates:
        s.requires_grad_(False)
    params = list(detector.parameters())
    if protector is not None:
        params = list(protector.parameters()) + params
    opt = torch.optim.Adam(params, lr=cfg.lr)
    return TrainState(protector, detector, list(surrogates), opt, HybridAttack(attack_cfg),
                      np.random.default_rng(cfg.seed), isp_params or IspParams(), mode=cfg.mode)


def _render(state, raws, omega, surrogate):
    return mix_render(raws, state.isp_params, surrogate, omega)


def forward_losses(state: TrainState, batch: torch.Tensor, cfg: TrainConfig, rng):
    """Run protection, rendering, attacks and detection; returns (loss, parts)."""
    b = batch.shape[0]
    omega = torch.from_numpy(rng.uniform(0, 1, size=b)).to(batch)
    surrogate = state.surrogates[int(rng.integers(len(state.surrogates)))]
    raw_hat = None
    if cfg.mode == "draw":
        raw_hat = mosaic(state.protector(demosaic_bilinear(batch))).clamp(0, 1)
        both = _render(state, torch.cat((batch, raw_hat)), torch.cat((omega, omega)), surrogate)
        rgb, rgb_hat = both[:b], both[b:]
    else:
        rgb = _render(state, batch, omega, surrogate)
        rgb_hat = rgb if cfg.mode == "robust_only" else state.protector(rgb)
    l_raw, l_rgb = fidelity_losses(batch, raw_hat, rgb, rgb_hat)
    if cfg.mode == "robust_only":
        l_raw = l_rgb = None
    elif cfg.mode == "rgb_protect":
        l_raw = None

    attacked_in = rgb_hat.clamp(0, 1)
    n_t = max(1, int(round(b * cfg.tamper_fraction)))
    plain = [x.detach() for x in rgb]
    protected = [x.detach() for x in attacked_in]
    samples = []
    for i in range(b):
        others = [j for j in range(b) if j != i]
        samples.append(state.attack(attacked_in[i], [protected[j] for j in others], rng,
                                    splice_pool=[plain[j] for j in others],
                                    force={"tamper": i < n_t}))
    images = torch.stack([s.image for s in samples])
    masks = torch.stack([s.gt_mask for s in samples])
    logits = state.detector(images)
    l_t = localization_losses(logits[:n_t], masks[:n_t])
    l_nt = localization_losses(logits[n_t:])
    loss = total_loss(l_raw, l_rgb, l_t, l_nt, cfg)
    parts = {"l_raw": l_raw, "l_rgb": l_rgb, "l_t": l_t, "l_nt": l_nt,
             "rgb": rgb, "rgb_hat": rgb_hat, "logits": logits, "masks": masks, "n_t": n_t}
    return loss, parts


def train_step(state: TrainState, batch: torch.Tensor, cfg: TrainConfig, rng=None) -> dict:
    """One Adam update of protector and detector; returns the step metrics."""
    rng = rng if rng is not None else state.rng
    for m in (state.protector, state.detector):
        if m is not None:
            m.train()
    loss, parts = forward_losses(state, batch, cfg, rng)
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    params = [p for g in state.optimizer.param_groups for p in g["params"] if p.grad is not None]
    norm = float(torch.linalg.vector_norm(torch.stack(
        [torch.linalg.vector_norm(p.grad.detach()) for p in params])))
    clipped = skipped = False
    if not math.isfinite(norm):
        # guard for abnormal steps: drop non-finite entries, rescale to clip_norm
        for p in params:
            torch.nan_to_num_(p.grad, nan=0.0, posinf=0.0, neginf=0.0)
        rest = float(torch.nn.utils.clip_grad_norm_(params, cfg.clip_norm))
        clipped = True
        skipped = rest == 0.0
        log.warning("step %d: non-finite gradient norm, gradients sanitized and clipped to %.3g",
                    state.step, cfg.clip_norm)
    if skipped:
        state.optimizer.zero_grad(set_to_none=True)
    else:
        state.optimizer.step()
    state.step += 1
    with torch.no_grad():
        probs = torch.sigmoid(parts["logits"])
        n_t = parts["n_t"]
        f1 = [seg_metrics(probs[i], parts["masks"][i])[1] for i in range(n_t)]
        false_alarm = float((probs[n_t:] > 0.5).double().mean())
    metrics = {"step": state.step, "loss": loss.item(),
               "psnr_rgb": psnr(parts["rgb"], parts["rgb_hat"].clamp(0, 1)),
               "f1": float(np.mean(f1)), "false_alarm": false_alarm,
               "grad_norm": norm, "clipped": clipped, "skipped": skipped,
               "p_params": count_parameters(state.protector)}
    for k in ("l_raw", "l_rgb", "l_t", "l_nt"):
        metrics[k] = None if parts[k] is None else float(parts[k].detach())
    return metrics


def as_tensor_batch(dataset) -> torch.Tensor:
    if isinstance(dataset, torch.Tensor):
        data = dataset
    else:
        data = torch.stack([r.data if isinstance(r, RawImage) else r for r in dataset])
    if data.dim() != 4 or data.shape[1] != 1:
        raise ValueError(f"expected RAW data [N, 1, H, W], got {tuple(data.shape)}")
    return data


def sample_batch(data: torch.Tensor, cfg: TrainConfig, rng) -> torch.Tensor:
    """Random images and random crops at even offsets (the CFA phase is kept)."""
    n, _, h, w = data.shape
    idx = rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
    c = cfg.crop_size
    if h < c or w < c:
        raise ValueError(f"images {h}x{w} are smaller than crop_size {c}")
    out = []
    for i in idx:
        y0 = 2 * int(rng.integers(0, (h - c) // 2 + 1))
        x0 = 2 * int(rng.integers(0, (w - c) // 2 + 1))
        out.append(data[i, :, y0:y0 + c, x0:x0 + c])
    return torch.stack(out)


def pretrain_surrogates(data, cfg: TrainConfig, isp_params: IspParams | None = None,
                        steps: int = 500, lr: float = 1e-2) -> list:
    """``n_isp_surrogates`` surrogates fitted from different seeds."""
    raws = list(as_tensor_batch(data))
    return [pretrain_learnable_isp(raws, isp_params, steps=steps, lr=lr, seed=cfg.seed * 1000 + k)[0]
            for k in range(cfg.n_isp_surrogates)]


# ------------------------------------------------------------------ checkpoints

def save_state(state: TrainState, directory, cfg: TrainConfig, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if state.protector is not None:
        save_mpfnet(state.protector, directory / "protector")
    save_detector(state.detector, directory / "detector")
    for k, s in enumerate(state.surrogates):
        torch.save(s.state_dict(), directory / f"isp-{k}.pt")
    torch.save({"optimizer": state.optimizer.state_dict(), "step": state.step,
                "rng": state.rng.bit_generator.state, "torch_rng": torch.get_rng_state(),
                "attack_counter": state.attack.counter}, directory / "train_state.pt")
    meta = {"train": asdict(cfg), "attack": state.attack.cfg.to_dict(),
            "isp": state.isp_params.to_dict(), "step": state.step,
            "surrogates": [{"width": s.width, "pattern": s.pattern} for s in state.surrogates],
            **(extra or {})}
    (directory / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def load_state(directory, cfg: TrainConfig | None = None) -> tuple:
    """Restore a checkpoint written by :func:`save_state`; returns ``(state, cfg)``."""
    directory = Path(directory)
    if not (directory / "run.json").exists():
        raise FileNotFoundError(f"no checkpoint at {directory}")
    meta = json.loads((directory / "run.json").read_text())
    cfg = cfg or TrainConfig(**meta["train"])
    surrogates = []
    specs = meta.get("surrogates") or [{}] * cfg.n_isp_surrogates
    for k, spec in enumerate(specs):
        s = LearnableIsp(**spec)
        s.load_state_dict(torch.load(directory / f"isp-{k}.pt", weights_only=True))
        surrogates.append(s)
    attack_cfg = AttackConfig(**meta["attack"])
    protector = load_mpfnet(directory / "protector") if cfg.mode != "robust_only" else None
    detector = load_detector(directory / "detector")
    state = init_state(cfg, surrogates, protector.cfg if protector else None, attack_cfg,
                       IspParams(**meta["isp"]), {"architecture_id": detector.architecture_id,
                                                  **detector.config})
    if protector is not None:
        state.protector.load_state_dict(protector.state_dict())
    state.detector.load_state_dict(detector.state_dict())
    saved = torch.load(directory / "train_state.pt", weights_only=False)
    state.optimizer.load_state_dict(saved["optimizer"])
    state.step = saved["step"]
    state.rng.bit_generator.state = saved["rng"]
    torch.set_rng_state(saved["torch_rng"])
    state.attack.counter = saved["attack_counter"]
    return state, cfg


def train(cfg: TrainConfig, dataset, out_dir="runs", surrogates=None, state: TrainState | None = None,
          mpf_cfg: MpfConfig | None = None, attack_cfg: AttackConfig | None = None,
          isp_params: IspParams | None = None, detector_cfg: dict | None = None,
          log_every: int = 50) -> Path:
    """Train for ``cfg.steps`` steps (continuing from ``state.step`` if given).

    Metrics go to ``<out_dir>/<run_name>/metrics.jsonl``; checkpoints to
    ``<out_dir>/<run_name>/ckpt-<step>``. Returns the final checkpoint path.
    """
    data = as_tensor_batch(dataset)
    if len(data) == 0:
        raise ValueError("dataset is empty")
    run_dir = Path(out_dir) / cfg.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    if state is None:
        if surrogates is None:
            surrogates = pretrain_surrogates(data, cfg, isp_params)
        state = init_state(cfg, surrogates, mpf_cfg, attack_cfg, isp_params, detector_cfg)
    metrics_path = run_dir / "metrics.jsonl"
    last = None
    with metrics_path.open("a") as fh:
        while state.step < cfg.steps:
            batch = sample_batch(data, cfg, state.rng)
            m = train_step(state, batch, cfg)
            fh.write(json.dumps(m, sort_keys=True) + "\n")
            fh.flush()
            if state.step % log_every == 0:
                log.info("step %d loss %.4f psnr %.2f f1 %.3f", state.step, m["loss"],
                         m["psnr_rgb"], m["f1"])
            if state.step % cfg.ckpt_every == 0 or state.step == cfg.steps:
                last = save_state(state, run_dir / f"ckpt-{state.step}", cfg)
    if last is None:
        last = save_state(state, run_dir / f"ckpt-{state.step}", cfg)
    return last
