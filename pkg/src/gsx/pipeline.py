"""End-to-end object extraction.

Stage order: pretrain (or load) -> distill -> select -> prune ->
camera-sample -> render+mask -> inpaint -> fine-tune -> export. Every
stage persists its artifacts under the run directory and is replayed
from disk on resume; `run.json` records status, timings, and content
hashes so a finished run is self-describing.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gsx import dataset, training
from gsx.evaluation import evaluate_object, rows_to_csv, summarize_scene
from gsx.inpaint import InpaintRequest, InpainterBinding, inpaint
from gsx.occlusion import (assemble_grid, morphological_open, occlusion_mask,
                           sample_object_cameras, silhouette_band, split_grid)
from gsx.ply import load_gaussian_ply, save_gaussian_ply
from gsx.pruning import KnnConfig, prune_floaters
from gsx.renderer import render
from gsx.types import (Camera, ClassifierWeights, GaussianCloud,
                       PipelineConfig, ValidationError)

STAGE_ORDER = ("pretrain", "distill", "select", "prune", "camera-sample",
               "render-mask", "inpaint", "fine-tune", "export")


class StageError(RuntimeError):
    """A pipeline stage failed; prior artifacts remain on disk."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


@dataclass
class StageRecord:
    name: str
    status: str = "pending"        # completed | skipped | pending
    reason: str = ""
    wall_seconds: float = 0.0
    artifacts: dict = field(default_factory=dict)   # name -> relative path


@dataclass
class PipelineRun:
    config: PipelineConfig
    object_id: int
    run_dir: Path
    stages: list[StageRecord] = field(default_factory=list)

    def record(self, name: str) -> StageRecord:
        for s in self.stages:
            if s.name == name:
                return s
        rec = StageRecord(name)
        self.stages.append(rec)
        return rec

    def artifact(self, stage: str, key: str) -> Path:
        return self.run_dir / self.record(stage).artifacts[key]

    def save_manifest(self) -> None:
        hashes = {}
        for s in self.stages:
            for key, rel in s.artifacts.items():
                p = self.run_dir / rel
                if p.exists():
                    hashes[rel] = hashlib.sha256(p.read_bytes()).hexdigest()
        with open(self.run_dir / "run.json", "w") as f:
            json.dump({
                "object_id": self.object_id,
                "config": self.config.to_dict(),
                "stage_order": list(STAGE_ORDER),
                "stages": [{
                    "name": s.name, "status": s.status, "reason": s.reason,
                    "wall_seconds": s.wall_seconds, "artifacts": s.artifacts,
                } for s in self.stages],
                "hashes": hashes,
            }, f, indent=1)


def _save_classifier(path, classifier: ClassifierWeights) -> None:
    np.savez(path, weight=classifier.weight, bias=classifier.bias)


def _load_classifier(path) -> ClassifierWeights:
    data = np.load(path)
    return ClassifierWeights(data["weight"], data["bias"])


def estimate_scene_center(cameras: list[Camera]) -> tuple[np.ndarray, float]:
    """Least-squares intersection of the cameras' optical axes, plus the
    mean camera distance to it."""
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for cam in cameras:
        d = cam.rotation[2]              # world-space view direction
        p = cam.center
        m = np.eye(3) - np.outer(d, d)
        a += m
        b += m @ p
    center = np.linalg.solve(a + 1e-12 * np.eye(3), b)
    dist = float(np.mean([np.linalg.norm(cam.center - center)
                          for cam in cameras]))
    return center, dist


def random_init_cloud(cameras: list[Camera], config: PipelineConfig,
                      seed: int) -> GaussianCloud:
    """Uniform ball of low-opacity gray Gaussians around the estimated
    scene center, sized from the camera ring."""
    rng = np.random.default_rng(seed)
    center, dist = estimate_scene_center(cameras)
    radius = 0.45 * dist
    n = config.init_gaussians
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts = center + pts * radius * rng.uniform(0.0, 1.0, (n, 1)) ** (1 / 3)
    scale = 2.0 * radius / np.sqrt(n)
    h = (config.sh_degree + 1) ** 2
    coeffs = np.zeros((n, 3, h))
    coeffs[:, :, 0] = rng.normal(0.0, 0.3, (n, 3))
    return GaussianCloud(
        positions=pts,
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        scales=np.full((n, 3), scale),
        opacities=np.full(n, 0.3),
        color_coeffs=coeffs,
        object_features=np.zeros((n, config.feature_dim)))


def run_extraction(data_dir, object_id: int, config: PipelineConfig,
                   run_dir, no_prune: bool = False, no_inpaint: bool = False,
                   binding: InpainterBinding | None = None,
                   resume: bool = True) -> PipelineRun:
    data_dir = Path(data_dir)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    binding = binding or InpainterBinding()
    run = PipelineRun(config=config, object_id=object_id, run_dir=run_dir)

    images, cameras, masks = dataset.load_dataset(data_dir)
    if masks is None:
        raise StageError("distill", "dataset has no masks/ directory")
    if not 1 <= object_id <= config.class_count - 1:
        raise ValidationError(
            f"object_id must be in [1, {config.class_count - 1}]")

    def done(rec, *paths):
        return resume and all((run_dir / p).exists() for p in paths)

    # ---- pretrain (or load) -------------------------------------------
    rec = run.record("pretrain")
    t0 = time.time()
    rec.artifacts = {"cloud": "pretrained.ply"}
    if done(rec, "pretrained.ply"):
        scene_cloud = load_gaussian_ply(run_dir / "pretrained.ply")
        rec.status, rec.reason = "completed", "resumed from disk"
    elif config.pretrain_iters == 0:
        src = data_dir / "scene.ply"
        if not src.exists():
            raise StageError("pretrain",
                             "pretrain_iters=0 requires scene.ply to load")
        scene_cloud = load_gaussian_ply(src)
        if scene_cloud.feature_dim != config.feature_dim:
            feats = np.zeros((scene_cloud.count, config.feature_dim))
            scene_cloud = scene_cloud.replace_arrays(object_features=feats)
        save_gaussian_ply(scene_cloud, run_dir / "pretrained.ply")
        rec.status, rec.reason = "completed", "loaded scene.ply"
    else:
        init = random_init_cloud(cameras, config, config.rng_seed)
        scene_cloud, _ = training.pretrain_scene(init, images, cameras, config)
        save_gaussian_ply(scene_cloud, run_dir / "pretrained.ply")
        rec.status = "completed"
    rec.wall_seconds = time.time() - t0
    run.save_manifest()

    # ---- distill -------------------------------------------------------
    rec = run.record("distill")
    t0 = time.time()
    rec.artifacts = {"cloud": "distilled.ply", "classifier": "classifier.npz"}
    if done(rec, "distilled.ply", "classifier.npz"):
        distilled = load_gaussian_ply(run_dir / "distilled.ply")
        classifier = _load_classifier(run_dir / "classifier.npz")
        rec.status, rec.reason = "completed", "resumed from disk"
    else:
        distilled, classifier = training.distill_object_features(
            scene_cloud, cameras, masks, config)
        save_gaussian_ply(distilled, run_dir / "distilled.ply")
        _save_classifier(run_dir / "classifier.npz", classifier)
        rec.status = "completed"
    rec.wall_seconds = time.time() - t0
    run.save_manifest()

    # ---- select --------------------------------------------------------
    rec = run.record("select")
    t0 = time.time()
    rec.artifacts = {"cloud": "selected.ply"}
    if done(rec, "selected.ply"):
        selected = load_gaussian_ply(run_dir / "selected.ply")
        rec.status, rec.reason = "completed", "resumed from disk"
    else:
        selected = training.select_object(distilled, classifier, object_id)
        if selected.count == 0:
            raise StageError("select", f"object {object_id} selected no "
                             "Gaussians")
        save_gaussian_ply(selected, run_dir / "selected.ply")
        rec.status = "completed"
    rec.wall_seconds = time.time() - t0
    run.save_manifest()

    # ---- prune ---------------------------------------------------------
    rec = run.record("prune")
    t0 = time.time()
    if no_prune:
        pruned = selected
        rec.status, rec.reason = "skipped", "--no-prune"
        rec.artifacts = {}
    else:
        rec.artifacts = {"cloud": "pruned.ply", "report": "prune_report.json"}
        if done(rec, "pruned.ply", "prune_report.json"):
            pruned = load_gaussian_ply(run_dir / "pruned.ply")
            rec.status, rec.reason = "completed", "resumed from disk"
        else:
            pruned, report = prune_floaters(
                selected, KnnConfig(k=config.knn_k, eps=config.knn_eps))
            if pruned.count == 0:
                raise StageError("prune", "pruning removed every Gaussian")
            save_gaussian_ply(pruned, run_dir / "pruned.ply")
            report.to_json(run_dir / "prune_report.json")
            rec.status = "completed"
    rec.wall_seconds = time.time() - t0
    run.save_manifest()

    # ---- camera-sample -------------------------------------------------
    rec = run.record("camera-sample")
    t0 = time.time()
    rec.artifacts = {"cameras": "inpaint_cameras.json"}
    if done(rec, "inpaint_cameras.json"):
        inpaint_cams = dataset.load_cameras(run_dir / "inpaint_cameras.json")
        rec.status, rec.reason = "completed", "resumed from disk"
    else:
        centroid = pruned.positions.mean(axis=0)
        ring = float(np.median([np.linalg.norm(cam.center - centroid)
                                for cam in cameras]))
        # Draw a pool of candidate viewpoints and keep the ones whose
        # occluded area is smallest but non-empty where possible: small
        # holes fill reliably, while a heavily blocked viewpoint would
        # replace good object content with interpolated filler.
        candidates = sample_object_cameras(
            pruned, cameras[0], count=3 * config.inpaint_views,
            seed=config.rng_seed + 3, min_distance=0.8 * ring)
        fractions = []
        for cam in candidates:
            obj_out = render(pruned, cam)
            m = occlusion_mask(render(scene_cloud, cam).depth,
                               obj_out.depth)
            m &= silhouette_band(obj_out.alpha)
            m = morphological_open(m, config.opening_kernel)
            fractions.append(float(m.mean()))
        def preference(f):
            if 0.0 < f <= 0.05:
                return f            # small repairable hole: best
            if f == 0.0:
                return 0.5          # nothing to fix: neutral anchor view
            return 1.0 + f          # mostly blocked: last resort
        order = sorted(range(len(candidates)),
                       key=lambda i: (preference(fractions[i]), i))
        inpaint_cams = [candidates[i]
                        for i in order[:config.inpaint_views]]
        dataset.save_cameras(run_dir / "inpaint_cameras.json", inpaint_cams)
        rec.status = "completed"
    rec.wall_seconds = time.time() - t0
    run.save_manifest()

    # ---- render + mask -------------------------------------------------
    rec = run.record("render-mask")
    t0 = time.time()
    render_files = [f"inpaint_view_{i}.png" for i in range(len(inpaint_cams))]
    mask_files = [f"inpaint_mask_{i}.png" for i in range(len(inpaint_cams))]
    rec.artifacts = {f"view_{i}": p for i, p in enumerate(render_files)}
    rec.artifacts.update({f"mask_{i}": p for i, p in enumerate(mask_files)})
    if done(rec, *render_files, *mask_files):
        object_views = [dataset.load_image(run_dir / p) for p in render_files]
        view_masks = [dataset.load_binary_mask(run_dir / p)
                      for p in mask_files]
        rec.status, rec.reason = "completed", "resumed from disk"
    else:
        object_views = []
        view_masks = []
        for i, cam in enumerate(inpaint_cams):
            obj_out = render(pruned, cam)
            scene_out = render(scene_cloud, cam)
            m = occlusion_mask(scene_out.depth, obj_out.depth)
            m &= silhouette_band(obj_out.alpha)
            m = morphological_open(m, config.opening_kernel)
            object_views.append(obj_out.color)
            view_masks.append(m)
            dataset.save_image(run_dir / render_files[i], obj_out.color)
            dataset.save_binary_mask(run_dir / mask_files[i], m)
        rec.status = "completed"
    rec.wall_seconds = time.time() - t0
    run.save_manifest()

    # ---- inpaint -------------------------------------------------------
    rec = run.record("inpaint")
    t0 = time.time()
    if no_inpaint:
        rec.status, rec.reason = "skipped", "--no-inpaint"
        rec.artifacts = {}
        inpainted_views = None
    else:
        rec.artifacts = {"grid": "inpainted_grid.png"}
        rec.artifacts.update({f"view_{i}": f"inpainted_view_{i}.png"
                              for i in range(len(inpaint_cams))})
        files = ["inpainted_grid.png"] + [f"inpainted_view_{i}.png"
                                          for i in range(len(inpaint_cams))]
        if done(rec, *files):
            inpainted_views = [
                dataset.load_image(run_dir / f"inpainted_view_{i}.png")
                for i in range(len(inpaint_cams))]
            rec.status, rec.reason = "completed", "resumed from disk"
        else:
            grid = assemble_grid(object_views)
            grid_mask = assemble_grid([m.astype(np.float64)
                                       for m in view_masks]) > 0.5
            req = InpaintRequest(image=grid, mask=grid_mask,
                                 seed=config.rng_seed)
            filled = inpaint(req, binding)
            inpainted_views = split_grid(filled)
            dataset.save_image(run_dir / "inpainted_grid.png", filled)
            for i, img in enumerate(inpainted_views):
                dataset.save_image(run_dir / f"inpainted_view_{i}.png", img)
            rec.status = "completed"
    rec.wall_seconds = time.time() - t0
    run.save_manifest()

    # ---- fine-tune -----------------------------------------------------
    rec = run.record("fine-tune")
    t0 = time.time()
    if no_inpaint:
        final = pruned
        rec.status, rec.reason = "skipped", "--no-inpaint (nothing to learn)"
        rec.artifacts = {}
    else:
        rec.artifacts = {"cloud": "finetuned.ply"}
        if done(rec, "finetuned.ply"):
            final = load_gaussian_ply(run_dir / "finetuned.ply")
            rec.status, rec.reason = "completed", "resumed from disk"
        elif config.finetune_iters == 0:
            final = pruned
            save_gaussian_ply(final, run_dir / "finetuned.ply")
            rec.status, rec.reason = "completed", "finetune_iters=0"
        else:
            # Reload the inpainted views from their 8-bit PNG form so a
            # resumed run optimizes against identical targets.
            inpainted_views = [
                dataset.load_image(run_dir / f"inpainted_view_{i}.png")
                for i in range(len(inpaint_cams))]
            # The object model must explain its own visible surface and
            # stay empty over object-free background; pixels showing other
            # objects are ambiguous (ours may sit behind).  Rather than
            # drop those pixels from the loss — which lets the optimizer
            # drift arbitrarily wherever no view supervises it — anchor
            # them to the pruned model's own render, so occluded regions
            # hold their current state unless an inpainted view says
            # otherwise.
            targets = []
            for cam, image, label in zip(cameras, images, masks):
                visible = (label == object_id) | (label == 0)
                anchor = render(pruned, cam).color
                targets.append(np.where(visible[:, :, None], image, anchor))
            full_masks = [np.ones(img.shape[:2], dtype=bool)
                          for img in images]
            final, _ = training.finetune_with_inpainted(
                pruned, (cameras, targets, full_masks),
                (inpaint_cams, inpainted_views), config)
            save_gaussian_ply(final, run_dir / "finetuned.ply")
            rec.status = "completed"
    rec.wall_seconds = time.time() - t0
    run.save_manifest()

    # ---- export --------------------------------------------------------
    rec = run.record("export")
    t0 = time.time()
    final_name = f"object_{object_id}_final.ply"
    rec.artifacts = {"cloud": final_name}
    save_gaussian_ply(final, run_dir / final_name)
    gt_dir = data_dir / "gt" / f"object_{object_id}"
    test_cam_path = data_dir / "test_cameras.json"
    if gt_dir.is_dir() and test_cam_path.exists():
        test_cams = dataset.load_cameras(test_cam_path)
        gt_files = sorted(gt_dir.glob("*.png"))
        gt_images = [dataset.load_image(p) for p in gt_files]
        preds = [render(final, cam).color
                 for cam in test_cams[:len(gt_images)]]
        rows, summary = evaluate_object(preds, gt_images[:len(preds)],
                                        object_id=object_id)
        with open(run_dir / "eval_rows.csv", "w") as f:
            f.write(rows_to_csv(rows))
        with open(run_dir / "eval_summary.json", "w") as f:
            json.dump({"object": summary,
                       "scene": summarize_scene([summary])}, f, indent=1)
        rec.artifacts["eval_rows"] = "eval_rows.csv"
        rec.artifacts["eval_summary"] = "eval_summary.json"
        rec.reason = ""
    else:
        rec.reason = "no ground truth; eval skipped"
    rec.status = "completed"
    rec.wall_seconds = time.time() - t0
    run.save_manifest()
    return run
