"""``rawprotect`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 missing checkpoint.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .attacks import TAMPER_KINDS, attack_pipeline
from .config import ConfigError, RunConfig, dump_config, load_config
from .detector import load_detector
from .evaluation import evaluate
from .imaging import (BinaryMask, RawImage, RgbImage, center_crop_multiple, demosaic_bilinear,
                      load_image, mosaic, save_image, synthesize_raw, synthetic_raw_corpus,
                      synthetic_rgb)
from .isp import LearnableIsp, conventional_isp, mix_render
from .mpfnet import load_mpfnet
from .training import load_state, pretrain_surrogates, train

log = logging.getLogger("rawprotect")

EXIT_RUNTIME, EXIT_CONFIG, EXIT_CHECKPOINT = 1, 2, 3
RGB_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class MissingCheckpoint(RuntimeError):
    pass


# ------------------------------------------------------------------ helpers

def _config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def write_provenance(out: Path, command: str, cfg: RunConfig, args: argparse.Namespace,
                     extra: dict | None = None) -> Path:
    """JSON record of what produced the files in ``out`` (no timestamps, so reruns match)."""
    out.mkdir(parents=True, exist_ok=True)
    argv = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    record = {"command": command, "args": argv, "seed": cfg.seed, "config_hash": _config_hash(cfg),
              "versions": {"rawprotect": __version__, "python": platform.python_version(),
                           "torch": torch.__version__, "numpy": np.__version__},
              **(extra or {})}
    path = out / f"provenance-{command}.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _require(path, what: str) -> Path:
    if path is None or not Path(path).exists():
        raise MissingCheckpoint(f"{what} not found: {path}")
    return Path(path)


def _raw_files(directory) -> list:
    files = sorted(Path(directory).glob("*.pgm"))
    if not files:
        raise RuntimeError(f"no .pgm RAW files in {directory}")
    return files


def load_raw_dir(directory, pattern: str = "RGGB") -> torch.Tensor:
    raws = [load_image(p, expected_pattern=pattern) for p in _raw_files(directory)]
    shapes = {tuple(r.data.shape) for r in raws}
    if len(shapes) != 1:
        raise RuntimeError(f"RAW files in {directory} differ in size: {sorted(shapes)}")
    return torch.stack([r.data for r in raws])


def _load_rgb(path) -> torch.Tensor:
    img = load_image(path)
    if not isinstance(img, RgbImage):
        raise RuntimeError(f"{path} is not an RGB image")
    return center_crop_multiple(img.data, 16).contiguous()


def _cache_dir() -> Path | None:
    d = os.environ.get("DRAW_CACHE_DIR")
    return Path(d) if d else None


def _surrogate_key(data: torch.Tensor, cfg: RunConfig) -> str:
    h = hashlib.sha256(data.numpy().tobytes())
    h.update(json.dumps([cfg.isp.params().to_dict(), cfg.isp.pretrain_steps, cfg.isp.pretrain_lr,
                         cfg.train.seed, cfg.train.n_isp_surrogates]).encode())
    return h.hexdigest()[:20]


def save_surrogates(surrogates, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(surrogates):
        torch.save(s.state_dict(), directory / f"isp-{k}.pt")
    (directory / "manifest.json").write_text(json.dumps(
        {"kind": "isp_surrogates", "count": len(surrogates)}, indent=2) + "\n")
    return directory


def load_surrogates(directory) -> list:
    directory = _require(directory, "ISP surrogate directory")
    if not (directory / "manifest.json").exists():
        raise MissingCheckpoint(f"{directory} holds no surrogate manifest")
    count = json.loads((directory / "manifest.json").read_text())["count"]
    out = []
    for k in range(count):
        s = LearnableIsp()
        s.load_state_dict(torch.load(directory / f"isp-{k}.pt", weights_only=True))
        out.append(s)
    return out


def get_surrogates(data, cfg: RunConfig, isp_dir=None) -> list:
    """Explicit directory, then the cache, then fresh pretraining (stored in the cache)."""
    if isp_dir is not None:
        return load_surrogates(isp_dir)
    cache = _cache_dir()
    if cache is not None:
        target = cache / "surrogates" / _surrogate_key(data, cfg)
        if (target / "manifest.json").exists():
            log.info("using cached surrogates from %s", target)
            return load_surrogates(target)
    sur = pretrain_surrogates(data, cfg.train, cfg.isp.params(), cfg.isp.pretrain_steps,
                              cfg.isp.pretrain_lr)
    if cache is not None:
        save_surrogates(sur, target)
    return sur


# ------------------------------------------------------------------ commands

def _make_one(job):
    src, out_dir, params, pattern = job
    rgb = _load_rgb(src)
    raw = RawImage(synthesize_raw(rgb, params, pattern), pattern)
    dst = Path(out_dir) / (Path(src).stem + ".pgm")
    save_image(raw, dst)
    return dst.name


def cmd_make_raw(args, cfg: RunConfig) -> int:
    out = Path(args.out_dir or args.out or "raws")
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.isp.params()
    if args.isp_params:
        try:
            params = type(params)(**json.loads(Path(args.isp_params).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad --isp-params file: {exc}") from exc
    pattern = cfg.data.pattern
    if args.rgb_dir is None:
        # procedural corpus, the desk-scale stand-in for a photo collection
        rng = np.random.default_rng(cfg.data.seed if args.seed is None else args.seed)
        n = args.synthetic or cfg.data.n_raws
        for i in range(n):
            rgb = synthetic_rgb(cfg.data.size, rng)
            save_image(RawImage(synthesize_raw(rgb, params, pattern), pattern), out / f"synth-{i:04d}.pgm")
        write_provenance(out, "make-raw", cfg, args, {"written": n})
        print(f"wrote {n} synthetic RAW files to {out}")
        return 0
    sources = sorted(p for p in Path(args.rgb_dir).iterdir() if p.suffix.lower() in RGB_SUFFIXES)
    if not sources:
        raise RuntimeError(f"no RGB images in {args.rgb_dir}")
    jobs = [(s, out, params, pattern) for s in sources]
    written, failed = [], []
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            futures = [pool.submit(_make_one, j) for j in jobs]
            for src, fut in zip(sources, futures):
                try:
                    written.append(fut.result())
                except Exception as exc:  # noqa: BLE001
                    failed.append((src.name, str(exc)))
    else:
        for src, job in zip(sources, jobs):
            try:
                written.append(_make_one(job))
            except Exception as exc:  # noqa: BLE001
                failed.append((src.name, str(exc)))
    for name, err in failed:
        print(f"skipped {name}: {err}", file=sys.stderr)
    write_provenance(out, "make-raw", cfg, args, {"written": written, "failed": [f for f, _ in failed]})
    print(f"wrote {len(written)} RAW files to {out}")
    return 0 if written else EXIT_RUNTIME


def cmd_pretrain_isp(args, cfg: RunConfig) -> int:
    data = load_raw_dir(args.raw_dir, cfg.data.pattern)
    sur = pretrain_surrogates(data, cfg.train, cfg.isp.params(), cfg.isp.pretrain_steps,
                              cfg.isp.pretrain_lr)
    out = Path(args.out or "isp")
    save_surrogates(sur, out)
    if _cache_dir() is not None:
        save_surrogates(sur, _cache_dir() / "surrogates" / _surrogate_key(data, cfg))
    write_provenance(out, "pretrain-isp", cfg, args)
    print(f"saved {len(sur)} surrogates to {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    if cfg.data.pattern != "RGGB":
        raise ConfigError("training currently supports the RGGB pattern only")
    out = Path(args.out or "runs")
    if args.raw_dir:
        data = load_raw_dir(args.raw_dir, cfg.data.pattern)
    else:
        data = torch.stack([r.data for r in synthetic_raw_corpus(
            cfg.data.n_raws, cfg.data.size, cfg.isp.params(), cfg.data.seed)])
    state = None
    if args.resume:
        state, _ = load_state(_require(args.resume, "checkpoint"), cfg.train)
        surrogates = state.surrogates
    else:
        surrogates = get_surrogates(data, cfg, args.isp_dir)
    if args.workers > 1:
        torch.set_num_threads(args.workers)
    ckpt = train(cfg.train, data, out, surrogates, state, cfg.mpf, cfg.attack, cfg.isp.params(),
                 {"architecture_id": cfg.detector.architecture_id, "base": cfg.detector.base,
                  "stages": cfg.detector.stages})
    run_dir = out / cfg.train.run_name
    (run_dir / "config.yaml").write_text(dump_config(cfg))
    write_provenance(run_dir, "train", cfg, args, {"checkpoint": str(ckpt)})
    print(ckpt)
    return 0


def cmd_protect(args, cfg: RunConfig) -> int:
    ckpt = _require(args.ckpt, "checkpoint")
    protector_dir = ckpt / "protector" if (ckpt / "protector").exists() else ckpt
    _require(protector_dir / "manifest.json", "protector checkpoint")
    model = load_mpfnet(protector_dir).eval()
    raw = load_image(args.input)
    if not isinstance(raw, RawImage):
        raise RuntimeError(f"{args.input} is not a RAW (.pgm) file")
    with torch.no_grad():
        prot = mosaic(model(demosaic_bilinear(raw.data, raw.pattern)), raw.pattern).clamp(0, 1)
    out = Path(args.out or "protected.pgm")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(RawImage(prot, raw.pattern, raw.black_level, raw.white_level), out)
    write_provenance(out.parent, "protect", cfg, args)
    print(out)
    return 0


def cmd_render(args, cfg: RunConfig) -> int:
    raw = load_image(args.input)
    if not isinstance(raw, RawImage):
        raise RuntimeError(f"{args.input} is not a RAW (.pgm) file")
    params = cfg.isp.params()
    with torch.no_grad():
        if args.omega >= 1.0:
            rgb = conventional_isp(raw.data, params, raw.pattern)
        else:
            sur_dir = Path(args.ckpt) if args.ckpt else None
            if sur_dir is None:
                raise MissingCheckpoint("--omega < 1 needs --ckpt with ISP surrogates")
            files = sorted(_require(sur_dir, "checkpoint").glob("isp-*.pt"))
            if not files:
                raise MissingCheckpoint(f"no isp-*.pt surrogate in {sur_dir}")
            spec = {}
            if (sur_dir / "run.json").exists():
                specs = json.loads((sur_dir / "run.json").read_text()).get("surrogates") or [{}]
                spec = {"width": specs[0].get("width", 16)}
            sur = LearnableIsp(pattern=raw.pattern, **spec)
            sur.load_state_dict(torch.load(files[0], weights_only=True))
            rgb = mix_render(raw.data[None], params, sur, args.omega, raw.pattern)[0]
    out = Path(args.out or "render.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(RgbImage(rgb.clamp(0, 1)), out)
    write_provenance(out.parent, "render", cfg, args)
    print(out)
    return 0


def cmd_tamper(args, cfg: RunConfig) -> int:
    img = _load_rgb(args.input)
    pool = [_load_rgb(p) for p in (args.pool or [])]
    pool = [p for p in pool if p.shape == img.shape]
    if args.kind in ("splice", "coincident_splice") and not pool:
        raise RuntimeError(f"--kind {args.kind} needs at least one same-size --pool image")
    rng = np.random.default_rng(cfg.seed)
    force = {"tamper": True}
    if not args.all_modules:
        force.update(color=False, distortion=False, crop=False)
    sample = attack_pipeline(img, pool, cfg.attack, rng, splice_pool=pool, tamper_kind=args.kind,
                             force=force)
    out = Path(args.out or "tampered")
    out.mkdir(parents=True, exist_ok=True)
    save_image(RgbImage(sample.image.detach()), out / "tampered.png")
    save_image(BinaryMask(sample.gt_mask), out / "mask.png")
    (out / "attack.json").write_text(sample.provenance() + "\n")
    write_provenance(out, "tamper", cfg, args)
    print(out)
    return 0


def cmd_detect(args, cfg: RunConfig) -> int:
    ckpt = _require(args.ckpt, "checkpoint")
    det_dir = ckpt / "detector" if (ckpt / "detector").exists() else ckpt
    _require(det_dir / "manifest.json", "detector checkpoint")
    model = load_detector(det_dir).eval()
    img = _load_rgb(args.input)
    with torch.no_grad():
        prob = torch.sigmoid(model(img[None]))[0]
    mask = (prob > args.threshold).float()
    out = Path(args.out or "pred_mask.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(BinaryMask(mask), out)
    area = float(mask.mean())
    write_provenance(out.parent, "detect", cfg, args, {"mask_area": area})
    print(f"{out} area={area:.4f}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    ckpt = _require(args.ckpt, "checkpoint")
    _require(ckpt / "run.json", "training checkpoint")
    if args.raw_dir:
        data = load_raw_dir(args.raw_dir, cfg.data.pattern)
    else:
        data = torch.stack([r.data for r in synthetic_raw_corpus(
            cfg.data.n_test, cfg.data.size, cfg.isp.params(), cfg.data.test_seed)])
    out = Path(args.out or "eval")
    report = evaluate(ckpt, data, cfg.eval.attacks, cfg.eval.tampers, cfg.eval.isp, cfg.eval.seed,
                      out, cfg.eval.area_range)
    write_provenance(out, "eval", cfg, args)
    print((out / "summary.md").read_text())
    return 0 if report.rows else EXIT_RUNTIME


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed (and train.seed)")
    common.add_argument("--workers", type=int, default=1,
                        help="parallel workers; >1 gives up bit-exact reproducibility")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rawprotect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-raw", parents=[common], help="synthesize RAW files from RGB images")
    s.add_argument("--rgb-dir", type=Path, help="directory of RGB images (omit for a procedural corpus)")
    s.add_argument("--out-dir", type=Path)
    s.add_argument("--isp-params", type=Path, help="JSON file with ISP parameters")
    s.add_argument("--synthetic", type=int, help="number of procedural images when --rgb-dir is absent")
    s.set_defaults(func=cmd_make_raw)

    s = sub.add_parser("pretrain-isp", parents=[common], help="fit the learnable ISP surrogates")
    s.add_argument("--raw-dir", type=Path, required=True)
    s.set_defaults(func=cmd_pretrain_isp)

    s = sub.add_parser("train", parents=[common], help="joint training of protector and detector")
    s.add_argument("--raw-dir", type=Path, help="training RAWs (default: procedural corpus)")
    s.add_argument("--isp-dir", type=Path, help="pretrained surrogates")
    s.add_argument("--resume", type=Path, help="checkpoint to continue from")
    s.add_argument("--mode", choices=("draw", "robust_only", "rgb_protect"))
    s.add_argument("--steps", type=int)
    s.add_argument("--run-name")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("protect", parents=[common], help="embed the protective signal into a RAW")
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--input", type=Path, required=True)
    s.set_defaults(func=cmd_protect)

    s = sub.add_parser("render", parents=[common], help="render a RAW to RGB")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--omega", type=float, default=1.0, help="1 = conventional ISP, 0 = surrogate")
    s.add_argument("--ckpt", type=Path, help="checkpoint holding isp-*.pt surrogates")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("tamper", parents=[common], help="tamper (and optionally attack) an RGB image")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--kind", choices=TAMPER_KINDS, required=True)
    s.add_argument("--pool", type=Path, nargs="*", help="source images for splicing")
    s.add_argument("--all-modules", action="store_true",
                   help="also let colour, distortion and crop fire at their scheduled rates")
    s.set_defaults(func=cmd_tamper)

    s = sub.add_parser("detect", parents=[common], help="predict a tamper mask")
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", parents=[common], help="run the attack-suite evaluation")
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--raw-dir", type=Path, help="test RAWs (default: procedural test corpus)")
    s.set_defaults(func=cmd_eval)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
        raw["train"]["seed"] = args.seed
    if args.command == "train":
        if args.mode is not None:
            # loss weights follow the mode
            raw["train"].update(mode=args.mode, alpha=None, beta=None, gamma=None, epsilon=None)
        for key in ("steps", "run_name"):
            if getattr(args, key) is not None:
                raw["train"][key] = getattr(args, key)
    return RunConfig.from_dict(raw)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingCheckpoint as exc:
        print(f"missing checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
