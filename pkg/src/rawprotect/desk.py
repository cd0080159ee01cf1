"""Desk-scale protocol: train draw and robust_only over several seeds, evaluate, aggregate.

Each (mode, seed) run is written under ``<out>/<mode>-<seed>`` and skipped on
rerun once its ``eval.json`` exists, so an interrupted protocol resumes where
it stopped. ``<out>/desk_results.json`` holds per-run numbers and medians.
"""
from __future__ import annotations

import argparse
import json
import logging
import statistics
import time
from dataclasses import asdict
from pathlib import Path

import torch

from .evaluation import evaluate
from .imaging import synthetic_raw_corpus
from .isp import LearnableIsp
from .training import TrainConfig, as_tensor_batch, pretrain_surrogates, train

log = logging.getLogger(__name__)

# (tamper, attack) cells reported by the protocol
CELLS = (("splice", "none"), ("copy_move", "none"), ("inpaint", "none"), ("splice", "jpeg85"),
         ("splice", "jpeg90"), ("splice", "jpeg70"), ("splice", "gaussian_blur"))


def _surrogates(data, cfg: TrainConfig, cache: Path) -> list:
    files = sorted(cache.glob("isp-*.pt"))
    if len(files) == cfg.n_isp_surrogates:
        out = []
        for f in files:
            s = LearnableIsp()
            s.load_state_dict(torch.load(f, weights_only=True))
            out.append(s)
        return out
    out = pretrain_surrogates(data, cfg)
    cache.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(out):
        torch.save(s.state_dict(), cache / f"isp-{k}.pt")
    return out


def run_one(out: Path, mode: str, seed: int, data, test, steps: int, **train_kw) -> dict:
    run_dir = out / f"{mode}-{seed}"
    done = run_dir / "eval.json"
    if done.exists():
        return json.loads(done.read_text())
    cfg = TrainConfig(mode=mode, seed=seed, steps=steps, run_name=f"{mode}-{seed}", **train_kw)
    surrogates = _surrogates(data, cfg, out / f"surrogates-{seed}")
    t0 = time.time()
    ckpt = train(cfg, data, out_dir=out, surrogates=surrogates)
    train_seconds = time.time() - t0
    report = evaluate(ckpt, test, seed=0, out_dir=run_dir / "eval")
    rows = [json.loads(line) for line in (run_dir / "metrics.jsonl").read_text().splitlines()]
    result = {
        "mode": mode, "seed": seed, "steps": steps, "checkpoint": str(ckpt),
        "train_seconds": train_seconds,
        "fidelity": {r["isp"]: {"psnr": r["psnr"], "ssim": r["ssim"]} for r in report.fidelity},
        "f1": {f"{t}/{a}": report.f1(t, a) for t, a in CELLS},
        "false_alarm": report.false_alarm,
        "clip_rate": sum(r["clipped"] for r in rows) / max(1, len(rows)),
        "config": asdict(cfg),
    }
    done.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def _median(runs, get):
    return statistics.median(get(r) for r in runs)


def summarize(runs: list) -> dict:
    """Medians over seeds for each mode and each reported quantity."""
    summary = {}
    for mode in sorted({r["mode"] for r in runs}):
        sel = [r for r in runs if r["mode"] == mode]
        summary[mode] = {
            "seeds": [r["seed"] for r in sel],
            "psnr": {isp: _median(sel, lambda r, i=isp: r["fidelity"][i]["psnr"])
                     for isp in sel[0]["fidelity"]},
            "f1": {k: _median(sel, lambda r, k=k: r["f1"][k]) for k in sel[0]["f1"]},
            "false_alarm_none": _median(sel, lambda r: r["false_alarm"]["none"]),
            "clip_rate": max(r["clip_rate"] for r in sel),
            "train_seconds_max": max(r["train_seconds"] for r in sel),
        }
    return summary


def run_protocol(out, seeds=(0, 1, 2), modes=("draw", "robust_only"), steps: int = 2000,
                 n_raws: int = 64, size: int = 128, n_test: int = 16, data_seed: int = 1000,
                 test_seed: int = 2000, **train_kw) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = as_tensor_batch(synthetic_raw_corpus(n_raws, size, seed=data_seed))
    test = as_tensor_batch(synthetic_raw_corpus(n_test, size, seed=test_seed))
    runs = [run_one(out, mode, seed, data, test, steps, **train_kw)
            for seed in seeds for mode in modes]
    result = {"protocol": {"seeds": list(seeds), "modes": list(modes), "steps": steps,
                           "n_raws": n_raws, "size": size, "n_test": n_test,
                           "data_seed": data_seed, "test_seed": test_seed},
              "runs": runs, "median": summarize(runs)}
    (out / "desk_results.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description="desk-scale training and evaluation protocol")
    p.add_argument("--out", type=Path, default=Path("desk"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--modes", nargs="+", default=["draw", "robust_only"])
    p.add_argument("--steps", type=int, default=2000)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    result = run_protocol(args.out, tuple(args.seeds), tuple(args.modes), args.steps)
    print(json.dumps(result["median"], indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
