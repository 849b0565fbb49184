"""Command-line surface for scene generation, training, extraction,
rendering, evaluation, pruning, and standalone inpainting.

Exit codes: 0 success, 1 runtime failure, 2 invalid input, 3 external
service unreachable, 64 unknown subcommand.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from gsx import dataset, training
from gsx.evaluation import (EvaluationError, evaluate_object, report_table,
                            rows_to_csv, summarize_scene)
from gsx.inpaint import (InpaintError, InpaintRequest, InpainterBinding,
                         TransportError, inpaint)
from gsx.pipeline import StageError, run_extraction
from gsx.ply import PlyFormatError, load_gaussian_ply, save_gaussian_ply
from gsx.pruning import KnnConfig, prune_floaters
from gsx.renderer import render
from gsx.scenegen import (GenerationError, SceneSpec, generate_scene,
                          save_scene)
from gsx.types import PipelineConfig, ValidationError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2
EXIT_SERVICE = 3
EXIT_USAGE = 64


def parse_config_file(path) -> dict:
    """Flat key = value config format; '#' starts a comment."""
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(
                    f"{path}:{lineno}: expected 'key = value'")
            key, _, text = line.partition("=")
            values[key.strip()] = _parse_value(text.strip())
    return values


def _parse_value(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text.strip("\"'")


def load_pipeline_config(path, overrides: dict) -> PipelineConfig:
    values = parse_config_file(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_dict(values)


def _apply_threads(threads: int | None) -> None:
    if threads:
        os.environ["NUMBA_NUM_THREADS"] = str(threads)


def cmd_gen(argv) -> int:
    p = argparse.ArgumentParser(prog="gsx gen",
                                description="Generate a synthetic dataset.")
    p.add_argument("--spec", help="JSON file of scene parameters")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    args = p.parse_args(argv)
    _apply_threads(args.threads)
    fields = {}
    if args.spec:
        with open(args.spec) as f:
            fields = json.load(f)
    if args.seed is not None:
        fields["seed"] = args.seed
    if "primitive_mix" in fields:
        fields["primitive_mix"] = tuple(fields["primitive_mix"])
    spec = SceneSpec(**fields)
    scene = generate_scene(spec)
    save_scene(scene, args.out)
    print(f"wrote {spec.object_count}-object scene "
          f"({scene.cloud.count} Gaussians, {spec.train_views} train views) "
          f"to {args.out}")
    return EXIT_OK


def cmd_pretrain(argv) -> int:
    p = argparse.ArgumentParser(prog="gsx pretrain",
                                description="Photometric scene training.")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    args = p.parse_args(argv)
    _apply_threads(args.threads)
    config = load_pipeline_config(
        args.config, {"pretrain_iters": args.iters, "rng_seed": args.seed})
    images, cameras, _ = dataset.load_dataset(args.data)
    from gsx.pipeline import random_init_cloud
    init = random_init_cloud(cameras, config, config.rng_seed)
    cloud, report = training.pretrain_scene(init, images, cameras, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_gaussian_ply(cloud, out / "pretrained.ply")
    report.to_csv(out / "pretrain_log.csv")
    print(f"pretrained {cloud.count} Gaussians for "
          f"{config.pretrain_iters} iterations -> {out / 'pretrained.ply'}")
    return EXIT_OK


def cmd_extract(argv) -> int:
    p = argparse.ArgumentParser(prog="gsx extract",
                                description="Extract one object end to end.")
    p.add_argument("--data", required=True)
    p.add_argument("--object", type=int, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--no-inpaint", action="store_true")
    p.add_argument("--inpainter", choices=("fallback", "remote"),
                   default="fallback")
    p.add_argument("--endpoint",
                   default=os.environ.get("GSX_INPAINT_ENDPOINT"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--fresh", action="store_true",
                   help="ignore artifacts from a previous run")
    args = p.parse_args(argv)
    _apply_threads(args.threads)
    config = load_pipeline_config(args.config, {"rng_seed": args.seed})
    binding = InpainterBinding(kind=args.inpainter, endpoint=args.endpoint)
    run = run_extraction(args.data, args.object, config, args.out,
                         no_prune=args.no_prune, no_inpaint=args.no_inpaint,
                         binding=binding, resume=not args.fresh)
    for stage in run.stages:
        note = f" ({stage.reason})" if stage.reason else ""
        print(f"{stage.name:14s} {stage.status:10s} "
              f"{stage.wall_seconds:8.2f}s{note}")
    print(f"final model: {run.artifact('export', 'cloud')}")
    return EXIT_OK


def cmd_render(argv) -> int:
    p = argparse.ArgumentParser(prog="gsx render",
                                description="Render a PLY at given cameras.")
    p.add_argument("--ply", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    args = p.parse_args(argv)
    _apply_threads(args.threads)
    cloud = load_gaussian_ply(args.ply)
    cameras = dataset.load_cameras(args.cameras)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(cameras):
        dataset.save_image(out / f"{i:04d}.png", render(cloud, cam).color)
    print(f"rendered {len(cameras)} views to {out}")
    return EXIT_OK


def cmd_eval(argv) -> int:
    p = argparse.ArgumentParser(prog="gsx eval",
                                description="Cropped PSNR/SSIM report.")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--object", type=int, default=1)
    p.add_argument("--threads", type=int, default=None)
    args = p.parse_args(argv)
    gt_files = sorted(Path(args.gt).glob("*.png"))
    if not gt_files:
        raise ValidationError(f"no ground-truth PNGs under {args.gt}")
    preds = []
    for path in gt_files:
        pred_path = Path(args.pred) / path.name
        if not pred_path.exists():
            raise ValidationError(f"missing prediction for view {path.name}")
        preds.append(dataset.load_image(pred_path))
    gts = [dataset.load_image(p) for p in gt_files]
    rows, summary = evaluate_object(preds, gts, object_id=args.object)
    with open(args.out, "w") as f:
        f.write(rows_to_csv(rows))
    print(report_table([summary], summarize_scene([summary])))
    return EXIT_OK


def cmd_prune(argv) -> int:
    p = argparse.ArgumentParser(prog="gsx prune",
                                description="Standalone floater pruning.")
    p.add_argument("--ply", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--threads", type=int, default=None)
    args = p.parse_args(argv)
    _apply_threads(args.threads)
    cloud = load_gaussian_ply(args.ply)
    pruned, report = prune_floaters(cloud, KnnConfig(k=args.k, eps=args.eps))
    save_gaussian_ply(pruned, args.out)
    print(f"kept {report.kept_count}/{cloud.count} "
          f"(pruned {report.pruned_count}, eps={report.eps:.4g}, "
          f"{report.wall_seconds:.2f}s)")
    return EXIT_OK


def cmd_inpaint(argv) -> int:
    p = argparse.ArgumentParser(prog="gsx inpaint",
                                description="Standalone image inpainting.")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inpainter", choices=("fallback", "remote"),
                   default="fallback")
    p.add_argument("--endpoint",
                   default=os.environ.get("GSX_INPAINT_ENDPOINT"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    args = p.parse_args(argv)
    image = dataset.load_image(args.image)
    mask = dataset.load_binary_mask(args.mask)
    binding = InpainterBinding(kind=args.inpainter, endpoint=args.endpoint)
    result = inpaint(InpaintRequest(image=image, mask=mask, seed=args.seed),
                     binding)
    dataset.save_image(args.out, result)
    print(f"inpainted {int(mask.sum())} pixels -> {args.out}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "extract": cmd_extract,
    "render": cmd_render,
    "eval": cmd_eval,
    "prune": cmd_prune,
    "inpaint": cmd_inpaint,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        names = ", ".join(COMMANDS)
        print(f"usage: gsx <subcommand> [options]\nsubcommands: {names}")
        return EXIT_OK
    name, rest = argv[0], argv[1:]
    handler = COMMANDS.get(name)
    if handler is None:
        print(f"gsx: unknown subcommand {name!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return handler(rest)
    except TransportError as exc:
        print(f"gsx {name}: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except (ValidationError, EvaluationError, InpaintError, PlyFormatError,
            dataset.DatasetError, json.JSONDecodeError) as exc:
        print(f"gsx {name}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StageError, GenerationError, OSError) as exc:
        print(f"gsx {name}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
