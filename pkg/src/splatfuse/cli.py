"""Command-line entry point.

Exit codes: 0 success, 2 bad input, 3 config/version mismatch,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import torch

from .core import Camera
from .errors import ConfigMismatch, InvariantViolation, SplatFuseError, VoxelSizeMismatch
from .ingest import Manifest, ManifestEntry, SceneSpec, synth_sequence, write_depth, write_frame
from .ingest import synth as synth_mod
from .ingest.frames import camera_from_dict, load_depth
from .metrics import EvalReport, evaluate_pair
from .pipeline import PipelineConfig, PipelineState, extract_all, reconstruct_sequence, write_census
from .ply import export_ply, import_ply
from .quantize import read_store, write_store
from .refiner import HeadConfig, HeadParams, load_checkpoint, save_checkpoint
from .render import rasterize, write_ppm
from .train import LossWeights, TrainConfig, train_loop

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_INTERNAL = 4

PRESETS = {
    "plane": synth_mod.plane_scene,
    "desk": synth_mod.desk_scene,
    "pan": synth_mod.pan_scene,
    "loop": synth_mod.loop_scene,
}


class UsageError(SplatFuseError, ValueError):
    pass


def _threads(args) -> int:
    env = os.environ.get("SALON_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"SALON_THREADS must be an integer, got {env!r}") from exc
    return max(1, args.threads)


def _setup(args) -> None:
    torch.set_num_threads(_threads(args))
    torch.manual_seed(args.seed)


def _load_params(args, latent_dim: int) -> HeadParams:
    overrides = {}
    if args.curve:
        overrides["curve"] = args.curve
    if args.patch_size:
        overrides["patch_size"] = args.patch_size
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint, **overrides)
        cfg = params.config
        if cfg.latent_dim != latent_dim:
            raise ConfigMismatch(f"checkpoint expects latent width {cfg.latent_dim}, frames carry {latent_dim}")
        if args.sh_degree is not None and args.sh_degree != cfg.sh_degree:
            raise ConfigMismatch(f"--sh-degree {args.sh_degree} but checkpoint has degree {cfg.sh_degree}")
    else:
        deg = 1 if args.sh_degree is None else args.sh_degree
        params = HeadParams(HeadConfig(latent_dim=latent_dim, sh_degree=deg, **overrides), seed=args.seed)
    if args.f64:
        params = params.double()
    return params


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(gamma=args.gamma, beta=args.beta, margin=args.margin)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _load_spec(arg: str, seed: int | None) -> SceneSpec:
    if arg.startswith("preset:"):
        name = arg.split(":", 1)[1]
        if name not in PRESETS:
            raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return PRESETS[name](seed=seed or 0)
    try:
        spec = SceneSpec.load(arg)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad scene spec {arg}: {exc}") from exc
    if seed is not None:
        spec.seed = seed
    return spec


def cmd_synth(args) -> int:
    spec = _load_spec(args.spec, args.seed_override)
    frames, depths = synth_sequence(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for fr, d in zip(frames, depths):
        stem = f"frame_{fr.frame_id:04d}"
        write_frame(fr, out / f"{stem}.slnf")
        write_depth(d, out / f"{stem}.slnd")
        write_ppm(fr.rgb, out / f"{stem}.ppm")
        entries.append(ManifestEntry(Path(f"{stem}.slnf"), fr.frame_id, Path(f"{stem}.slnd")))
    Manifest(entries).save(out / "manifest.json")
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    manifest = Manifest.load(args.manifest)
    frames = manifest.frames()
    if not frames:
        raise UsageError("manifest lists no frames")
    params = _load_params(args, frames[0].latent_dim)
    rec = reconstruct_sequence(frames, params, _pipeline_config(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_store(rec.state.store, out / "store.slna")
    export_ply(rec.gaussians, out / "gaussians.ply")
    write_census(rec.census, out / "census.csv")
    if not args.checkpoint:
        save_checkpoint(params, out / "heads.slnw")
    print(f"anchors={len(rec.state.store)} gaussians={len(rec.gaussians)}")
    return EXIT_OK


def _gaussians_from(args, cameras: list[Camera]):
    if args.ply:
        return import_ply(args.ply)
    store = read_store(args.store)
    params = _load_params(args, store.latent_dim)
    cfg = PipelineConfig(gamma=store.gamma, beta=args.beta, margin=args.margin)
    return extract_all(PipelineState(params, cfg, store), cameras)


def _load_cameras(path) -> list[tuple[str, Camera]]:
    path = Path(path)
    if path.suffix == ".slnf":
        from .ingest import load_frame

        return [(path.stem, load_frame(path).camera)]
    doc = json.loads(path.read_text())
    if "frames" in doc:
        m = Manifest.load(path)
        return [(e.path.stem, f.camera) for e, f in zip(m.entries, m.frames())]
    if "cameras" in doc:
        return [(c.get("name", f"view_{i:04d}"), camera_from_dict(c)) for i, c in enumerate(doc["cameras"])]
    return [(path.stem, camera_from_dict(doc))]


def cmd_render(args) -> int:
    try:
        cams = _load_cameras(args.camera)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad camera file {args.camera}: {exc}") from exc
    g = _gaussians_from(args, [c for _, c in cams])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dtype = np.float64 if args.f64 else np.float32
    for name, cam in cams:
        target = rasterize(g, cam, dtype=dtype)
        write_ppm(target.rgb, out / f"{name}.ppm")
        write_depth(np.where(target.alpha >= 0.5, target.depth, 0.0), out / f"{name}.slnd")
    print(f"rendered {len(cams)} view(s) of {len(g)} gaussians")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .render import read_ppm

    rdir, gdir = Path(args.renders), Path(args.ground_truth)
    if not rdir.is_dir() or not gdir.is_dir():
        raise UsageError("renders and ground truth must be directories")
    renders = {p.stem for p in rdir.glob("*.ppm")}
    truth = {p.stem for p in gdir.glob("*.ppm")}
    if not renders or renders - truth:
        raise UsageError(f"unpaired renders: {sorted(renders - truth)[:5] or 'none found'}")
    reports: list[EvalReport] = []
    for stem in sorted(renders):
        d = dg = None
        if (rdir / f"{stem}.slnd").exists() and (gdir / f"{stem}.slnd").exists():
            d, dg = load_depth(rdir / f"{stem}.slnd"), load_depth(gdir / f"{stem}.slnd")
        reports.append(evaluate_pair(stem, read_ppm(rdir / f"{stem}.ppm"), read_ppm(gdir / f"{stem}.ppm"), d, dg))
    cols = [f.name for f in fields(EvalReport)]
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in reports:
            w.writerow(asdict(r))
        mean = {c: np.nanmean([getattr(r, c) for r in reports]) for c in ("psnr", "ssim", "abs_rel", "delta1")}
        w.writerow({"name": "mean", **mean, "gaussians": 0, "anchors": 0, "ms_per_frame": 0.0})
    print(" ".join(f"{k}={v:.4f}" for k, v in mean.items()))
    return EXIT_OK


def cmd_export_ply(args) -> int:
    if args.ply:
        g = import_ply(args.ply)
    else:
        store = read_store(args.store)
        params = _load_params(args, store.latent_dim)
        cams = [c for _, c in _load_cameras(args.camera)] if args.camera else []
        cfg = PipelineConfig(gamma=store.gamma, beta=args.beta, margin=args.margin)
        g = extract_all(PipelineState(params, cfg, store), cams)
    export_ply(g, args.out, binary=not args.ascii)
    print(f"exported {len(g)} gaussians")
    return EXIT_OK


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_HEAD_KEYS = {f.name for f in fields(HeadConfig)}


def _train_config(path, args) -> tuple[TrainConfig, dict]:
    doc = json.loads(Path(path).read_text()) if path else {}
    if not isinstance(doc, dict):
        raise UsageError("train config must be a JSON object")
    head = doc.pop("head", {})
    unknown = (set(doc) - _TRAIN_KEYS) | (set(head) - _HEAD_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)}")
    doc.setdefault("seed", args.seed)
    if args.gamma_set:
        doc["gamma"] = args.gamma
    if "weights" in doc:
        doc["weights"] = LossWeights(**doc["weights"])
    try:
        return TrainConfig(**doc), head
    except TypeError as exc:
        raise UsageError(f"invalid train config: {exc}") from exc


def cmd_train(args) -> int:
    cfg, head = _train_config(args.config, args)
    sequences = [Manifest.load(m).frames() for m in args.manifests]
    latent = sequences[0][0].latent_dim
    if args.checkpoint:
        params = _load_params(args, latent)
    else:
        head = {"latent_dim": latent, **head}
        if args.sh_degree is not None:
            head["sh_degree"] = args.sh_degree
        try:
            params = HeadParams(HeadConfig(**head), seed=cfg.seed)
        except TypeError as exc:
            raise UsageError(f"invalid head config: {exc}") from exc
        if args.f64:
            params = params.double()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train_loop(sequences, cfg, params, out / "loss.csv", out / "heads.slnw")
    if res.log:
        print(f"iterations={len(res.log)} first_total={res.log[0]['total']:.5f} last_total={res.log[-1]['total']:.5f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--f64", action="store_true", help="double precision everywhere")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", help="head parameters (.slnw); random init if omitted")
    p.add_argument("--gamma", type=float, default=0.005)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--margin", type=float, default=0.15)
    p.add_argument("--curve", choices=["morton", "hilbert"])
    p.add_argument("--patch-size", type=int)
    p.add_argument("--sh-degree", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splatfuse", description="Online anchor-based splat reconstruction.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene into frame files")
    p.add_argument("spec", help="scene JSON, or preset:{plane,desk,pan,loop}")
    p.add_argument("out")
    p.add_argument("--scene-seed", dest="seed_override", type=int)
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reconstruct", help="stream a manifest through the pipeline")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _model_flags(p)
    _common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("render", help="render a PLY or anchor store")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ply")
    src.add_argument("--store")
    p.add_argument("--camera", required=True, help="camera JSON, manifest or .slnf frame")
    p.add_argument("--out", required=True)
    _model_flags(p)
    _common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="score renders against ground truth")
    p.add_argument("renders")
    p.add_argument("ground_truth")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-ply", help="write Gaussians as PLY")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ply")
    src.add_argument("--store")
    p.add_argument("--camera", help="cameras used to chunk the store")
    p.add_argument("--out", required=True)
    p.add_argument("--ascii", action="store_true")
    _model_flags(p)
    _common(p)
    p.set_defaults(func=cmd_export_ply)

    p = sub.add_parser("train", help="train the heads on synthetic manifests")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--config", help="JSON with train settings and an optional 'head' block")
    p.add_argument("--out", required=True)
    _model_flags(p)
    _common(p)
    p.set_defaults(func=cmd_train)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    raw = sys.argv[1:] if argv is None else list(argv)
    args.gamma_set = any(a == "--gamma" or a.startswith("--gamma=") for a in raw)
    try:
        _setup(args)
        return args.func(args)
    except (ConfigMismatch, VoxelSizeMismatch) as exc:
        print(f"config mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (SplatFuseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
