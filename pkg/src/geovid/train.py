"""Two-stage training, the inference pipeline and strategy comparisons.

Stage 1 distills the encoder + adapter against the synthetic geometry and
semantics teachers. Stage 2 fine-tunes everything on the joint loss:
reconstruction targets are divided by the scene's mean ground-truth depth
so the relative heads stay scale-free, while the metric-bin head is
supervised in absolute meters; weighted-least-squares scale alignment ties
the two back together at inference.

Training strategies:
  two_stage_dual            stage 1 with both teachers, then stage 2
  two_stage_single_teacher  stage 1 with the geometry teacher only
  no_sc_loss                stage 1 with lambda_sc = 0
  single_stage              joint loss from scratch for the combined budget

All logged JSON is deterministic for a fixed config + seed; wall-clock
timings go to stderr only.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, worker_count
from .errors import DegenerateInputError, NumericError
from .evalmetrics import MetricsReport, depth_metrics, pointcloud_metrics, pose_metrics
from .geometry import METRIC, RELATIVE, CameraModel, DepthMap
from .losses import (
    LossReport, distill_loss, metric_depth_loss, recon_task_loss, vl_proxy_loss,
)
from .model import (
    FramePrediction, VidModelParams, adapt, init_model, predict_window,
)
from .numkit import AdamW, Tensor, no_grad
from .patch3d import Patch3DTokens, PointCloud, backproject_grid, fuse_tokens
from .scale_align import ScaleEstimate, apply_scale, scene_scale
from .synthscene import FrameData, SceneSample, TokenizerConfig, gen_scene

HELD_OUT_OFFSET = 900_000


@dataclass
class TrainLogEntry:
    step: int
    stage: int
    report: LossReport
    eval: MetricsReport | None = None

    def to_json(self) -> dict:
        return {"step": self.step, "stage": self.stage,
                "losses": self.report.to_json(),
                "eval": self.eval.to_json() if self.eval else None}


def write_jsonl(path: str | Path, entries: list[TrainLogEntry]) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json(), sort_keys=True))
            fh.write("\n")


# ----------------------------------------------------------------------
# scene supply
# ----------------------------------------------------------------------

def scene_seeds(cfg: RunConfig, count: int | None = None, held_out: bool = False) -> list[int]:
    n = cfg.n_scenes if count is None else count
    base = cfg.seed * 100_000 + (HELD_OUT_OFFSET if held_out else 0)
    return [base + i for i in range(n)]


def generate_scenes(cfg: RunConfig, count: int | None = None,
                    held_out: bool = False) -> list[SceneSample]:
    """Scene generation is pure per seed, so a thread pool keeps determinism."""
    seeds = scene_seeds(cfg, count, held_out)
    tok = TokenizerConfig(dim=cfg.dim, noise=cfg.token_noise,
                          seed=cfg.seed, patch_size=cfg.patch_size)

    def build(s: int) -> SceneSample:
        return gen_scene(s, n_frames=cfg.frames_per_scene,
                         resolution=cfg.resolution, n_objects=cfg.n_objects,
                         tokenizer=tok)

    workers = worker_count()
    if workers <= 1 or len(seeds) <= 1:
        return [build(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(build, seeds))


# ----------------------------------------------------------------------
# stage 1: dual-teacher distillation
# ----------------------------------------------------------------------

def _jitter(frame: FrameData, sigma: float, rng: np.random.Generator) -> FrameData:
    """Seeded token-level jitter (the stand-in for image augmentations)."""
    if sigma <= 0:
        return frame
    noisy = frame.base.tokens.data + sigma * rng.standard_normal(
        frame.base.tokens.shape)
    return replace(frame, base=frame.base.with_tokens(Tensor(noisy)))


def _lr_at(cfg: RunConfig, step: int, total: int) -> float:
    """Linear warmup, then cosine decay to 10% over the run."""
    warm = min(1.0, step / max(cfg.warmup_steps, 1))
    progress = min(1.0, step / max(total, 1))
    decay = 0.1 + 0.9 * 0.5 * (1.0 + np.cos(np.pi * progress))
    return cfg.lr * warm * decay


def _stage1_flags(strategy: str) -> tuple[bool, bool, bool]:
    """(use_geo, use_lang, use_sc) for the distillation variants."""
    if strategy == "two_stage_single_teacher":
        return True, False, True
    if strategy == "no_sc_loss":
        return True, True, False
    return True, True, True


def train_stage1(cfg: RunConfig, scenes: list[SceneSample],
                 params: VidModelParams | None = None,
                 dump_path: str | Path | None = None
                 ) -> tuple[VidModelParams, list[TrainLogEntry]]:
    """Distill the encoder + adapter; other modules stay untouched."""
    params = params or init_model(cfg)
    trainable = params.stage1_tensors()
    opt = AdamW(trainable, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                weight_decay=cfg.weight_decay, clip=cfg.clip)
    rng = np.random.default_rng([cfg.seed, 201])
    use_geo, use_lang, use_sc = _stage1_flags(cfg.strategy)
    lam = cfg.lambda_sc if use_sc else 0.0

    log: list[TrainLogEntry] = []
    t_start = time.monotonic()
    for step in range(1, cfg.stage1_steps + 1):
        opt.lr = _lr_at(cfg, step, cfg.stage1_steps)
        geo_acc = lang_acc = sc_acc = None
        try:
            for _ in range(cfg.stage1_batch):
                scene = scenes[int(rng.integers(len(scenes)))]
                frame = _jitter(scene.frames[int(rng.integers(len(scene.frames)))],
                                cfg.augment_jitter, rng)
                out = adapt(frame.base, params)
                res = distill_loss(out.geom, out.lang, frame.teacher_geom,
                                   frame.teacher_lang, lam=lam,
                                   use_geo=use_geo, use_lang=use_lang)
                geo_acc = res.geo if geo_acc is None else geo_acc + res.geo
                lang_acc = res.lang if lang_acc is None else lang_acc + res.lang
                sc_acc = res.sc if sc_acc is None else sc_acc + res.sc
            inv = 1.0 / cfg.stage1_batch
            geo, lang, sc = geo_acc * inv, lang_acc * inv, sc_acc * inv
            total = (geo + lang) + lam * sc
            opt.zero_grad()
            total.backward()
            opt.step()
        except NumericError as exc:
            _dump_abort(dump_path, stage=1, step=step, log=log, error=str(exc))
            raise
        report = LossReport(geo_feat=geo.item(), lang_feat=lang.item(),
                            sc=sc.item(), distill_total=total.item(),
                            lam=lam, alpha=cfg.alpha_md)
        log.append(TrainLogEntry(step=step, stage=1, report=report))
    _stderr_timing("stage1", cfg.stage1_steps, t_start)
    return params, log


# ----------------------------------------------------------------------
# stage 2: joint optimization
# ----------------------------------------------------------------------

def scene_norm(scene: SceneSample) -> float:
    """Deterministic per-scene depth normalizer for the relative targets."""
    return float(np.mean([f.depth.values.mean() for f in scene.frames]))


def _relative_targets(frame: FrameData, norm: float) -> tuple[DepthMap, CameraModel]:
    gt = frame.depth
    cam = frame.camera
    return (
        DepthMap(gt.values / norm, scale_kind=RELATIVE, valid_mask=gt.valid_mask),
        CameraModel(fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
                    rotation=cam.rotation, translation=cam.translation / norm,
                    scale_kind=RELATIVE),
    )


def _aligned_depth_for_vl(preds: list[FramePrediction], cfg: RunConfig,
                          clamp: bool = False) -> list[tuple[DepthMap, CameraModel]]:
    """Detached (metric depth, metric camera) pairs anchoring the 3D tokens.

    full: WLS + median alignment of the window predictions.
    no_alignment: the metric-bin depth directly, cameras left as predicted.
    off: the relative depth reinterpreted as metric (the scale-ambiguous
         ablation; geometry is wrong by an unknown factor, by design).

    `clamp` bounds the factor to [1e-2, 1e2]; training uses it so a bad
    early estimate cannot inject absurd anchor coordinates. Inference never
    clamps.
    """
    h, w = cfg.resolution
    out = []
    if cfg.md_mode == "full":
        pairs = [(DepthMap(p.depth_rel.data.copy(), scale_kind=RELATIVE),
                  DepthMap(p.depth_metric.data.reshape(h, w).copy(), scale_kind=METRIC))
                 for p in preds]
        est = scene_scale(pairs, sample_count=cfg.scale_samples, seed=cfg.seed)
        factor = est.scene_factor
        if clamp:
            factor = float(np.clip(factor, 1e-2, 1e2))
        for p, (rel, _) in zip(preds, pairs):
            d, c = apply_scale(factor, rel, p.camera.to_camera(RELATIVE))
            out.append((d, c))
    elif cfg.md_mode == "no_alignment":
        for p in preds:
            out.append((DepthMap(p.depth_metric.data.reshape(h, w).copy(),
                                 scale_kind=METRIC),
                        p.camera.to_camera(RELATIVE)))
    else:  # off
        for p in preds:
            out.append((DepthMap(p.depth_rel.data.copy(), scale_kind=METRIC),
                        p.camera.to_camera(RELATIVE)))
    return out


def _window_joint_loss(preds: list[FramePrediction], params: VidModelParams,
                       cfg: RunConfig, norm: float
                       ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """(joint, recon, vl, md) scalar tensors averaged over the window.

    `norm` is the scene-level depth normalizer: relative-branch targets are
    deterministic per frame, and the inference-time WLS factor absorbs it.
    """
    anchors = _aligned_depth_for_vl(preds, cfg, clamp=True)
    recon_acc = vl_acc = md_acc = None
    for p, (vl_depth, vl_cam) in zip(preds, anchors):
        gt_rel, cam_rel = _relative_targets(p.frame, norm)
        r = recon_task_loss(p.camera, cam_rel, p.depth_rel, gt_rel)
        t3d = fuse_tokens(p.lang, vl_depth, vl_cam, params.pos_embed,
                          patch_size=cfg.patch_size)
        vl = vl_proxy_loss(t3d, p.frame.patch_labels, params.vl_head)
        if cfg.md_mode == "off":
            md = Tensor(0.0)
        else:
            h, w = cfg.resolution
            md = metric_depth_loss(p.depth_metric.reshape(h, w), p.frame.depth,
                                   alpha=cfg.alpha_md, eps=cfg.eps_md)
        recon_acc = r.total if recon_acc is None else recon_acc + r.total
        vl_acc = vl if vl_acc is None else vl_acc + vl
        md_acc = md if md_acc is None else md_acc + md
    inv = 1.0 / len(preds)
    recon, vl, md = recon_acc * inv, vl_acc * inv, md_acc * inv
    joint = (recon + vl) + md
    return joint, recon, vl, md


def train_stage2(cfg: RunConfig, params: VidModelParams,
                 scenes: list[SceneSample],
                 steps: int | None = None,
                 dump_path: str | Path | None = None
                 ) -> tuple[VidModelParams, list[TrainLogEntry]]:
    """Fine-tune all modules on the joint loss (encoder at a reduced rate)."""
    trainable = params.named_tensors()
    lr_scale = {}
    for name in trainable:
        if name.startswith("encoder."):
            lr_scale[name] = cfg.encoder_lr_scale
        elif name.startswith("cta."):
            # the distilled adapter is fine-tuned gently so stage 2 cannot
            # unlearn the stage-1 alignment (single_stage uses full rate)
            lr_scale[name] = cfg.adapter_lr_scale
        elif name.startswith("camera_head."):
            lr_scale[name] = cfg.pose_lr_scale
    if cfg.strategy == "single_stage":
        lr_scale = {k: v for k, v in lr_scale.items()
                    if not k.startswith("cta.")}
    opt = AdamW(trainable, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                weight_decay=cfg.weight_decay, clip=cfg.clip, lr_scale=lr_scale)
    rng = np.random.default_rng([cfg.seed, 202])
    n_steps = cfg.stage2_steps if steps is None else steps

    log: list[TrainLogEntry] = []
    t_start = time.monotonic()
    for step in range(1, n_steps + 1):
        opt.lr = _lr_at(cfg, step, n_steps)
        try:
            scene = scenes[int(rng.integers(len(scenes)))]
            k = min(cfg.stage2_frames, len(scene.frames))
            idx = rng.choice(len(scene.frames), size=k, replace=False)
            window = [_jitter(scene.frames[int(i)], cfg.augment_jitter, rng)
                      for i in sorted(idx)]
            preds = predict_window(window, params, cfg)
            joint, recon, vl, md = _window_joint_loss(preds, params, cfg,
                                                      scene_norm(scene))
            opt.zero_grad()
            joint.backward()
            opt.step()
        except (NumericError, DegenerateInputError) as exc:
            _dump_abort(dump_path, stage=2, step=step, log=log, error=str(exc))
            raise
        report = LossReport(recon_task=recon.item(), vl_task=vl.item(),
                            md=md.item(), joint_total=joint.item(),
                            lam=cfg.lambda_sc, alpha=cfg.alpha_md)
        log.append(TrainLogEntry(step=step, stage=2, report=report))
    _stderr_timing("stage2", n_steps, t_start)
    return params, log


def _dump_abort(dump_path, stage: int, step: int, log: list[TrainLogEntry],
                error: str) -> None:
    if dump_path is None:
        return
    dump = {"stage": stage, "step": step, "error": error,
            "last_entries": [e.to_json() for e in log[-5:]]}
    with open(dump_path, "w") as fh:
        json.dump(dump, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _stderr_timing(label: str, steps: int, t_start: float) -> None:
    dt = time.monotonic() - t_start
    print(f"[geovid] {label}: {steps} steps in {dt * 1000.0:.0f} ms",
          file=sys.stderr)


def train(cfg: RunConfig, scenes: list[SceneSample],
          dump_path: str | Path | None = None
          ) -> tuple[VidModelParams, list[TrainLogEntry]]:
    """Full strategy-aware run.

    single_stage runs the joint stage from random initialization on the
    stage-2 schedule; the two-stage strategies distill first and then run
    the same joint schedule.
    """
    if cfg.strategy == "single_stage":
        params = init_model(cfg)
        return train_stage2(cfg, params, scenes, dump_path=dump_path)
    params, log1 = train_stage1(cfg, scenes, dump_path=dump_path)
    params, log2 = train_stage2(cfg, params, scenes, dump_path=dump_path)
    return params, log1 + log2


# ----------------------------------------------------------------------
# inference pipeline
# ----------------------------------------------------------------------

@dataclass
class PipelineResult:
    depths: list[DepthMap]            # final per-frame depth (scaled when aligned)
    cameras: list[CameraModel]
    cloud: PointCloud
    gt_cloud: PointCloud
    t3d: list[Patch3DTokens]
    metrics: MetricsReport
    scale: ScaleEstimate | None


def run_pipeline(cfg: RunConfig, scene: SceneSample,
                 params: VidModelParams, cloud_stride: int = 2) -> PipelineResult:
    """tokens -> adapter -> backbone -> heads -> bins -> alignment -> fusion -> metrics.

    Frames run through the backbone in windows of the training size; the
    scene-level scale is recovered once from all frames' depth pairs.
    """
    with no_grad():
        preds = []
        k = max(cfg.stage2_frames, 1)
        for lo in range(0, len(scene.frames), k):
            preds.extend(predict_window(scene.frames[lo:lo + k], params, cfg))
        anchors = _aligned_depth_for_vl(preds, cfg)
        scale = None
        if cfg.md_mode == "full":
            h, w = cfg.resolution
            pairs = [(DepthMap(p.depth_rel.data.copy(), scale_kind=RELATIVE),
                      DepthMap(p.depth_metric.data.reshape(h, w).copy(),
                               scale_kind=METRIC)) for p in preds]
            scale = scene_scale(pairs, sample_count=cfg.scale_samples, seed=cfg.seed)
        depths = [d for d, _ in anchors]
        cameras = [c for _, c in anchors]
        t3d = [fuse_tokens(p.lang, d, c, params.pos_embed, patch_size=cfg.patch_size)
               for p, (d, c) in zip(preds, anchors)]

    stride_mask = np.zeros(cfg.resolution, dtype=bool)
    stride_mask[::cloud_stride, ::cloud_stride] = True
    pred_pts = [backproject_grid(d, c, mask=stride_mask)
                for d, c in zip(depths, cameras)]
    gt_pts = [backproject_grid(f.depth, f.camera, mask=stride_mask)
              for f in scene.frames]
    cloud = PointCloud(np.concatenate(pred_pts, axis=0))
    gt_cloud = PointCloud(np.concatenate(gt_pts, axis=0))

    metrics = MetricsReport()
    gt_cams = [f.camera for f in scene.frames]
    if len(gt_cams) >= 2:
        metrics.pose = pose_metrics(cameras, gt_cams)
    if cfg.md_mode != "off":
        per_frame = [depth_metrics(d, f.depth)
                     for d, f in zip(depths, scene.frames)]
        metrics.depth = {k: float(np.mean([m[k] for m in per_frame]))
                         for k in per_frame[0]}
        metrics.recon = pointcloud_metrics(cloud, gt_cloud, tau=cfg.tau_f)
    return PipelineResult(depths=depths, cameras=cameras, cloud=cloud,
                          gt_cloud=gt_cloud, t3d=t3d, metrics=metrics,
                          scale=scale)


# ----------------------------------------------------------------------
# held-out evaluation and the strategy comparison
# ----------------------------------------------------------------------

def evaluate_test_loss(cfg: RunConfig, params: VidModelParams,
                       scenes: list[SceneSample]) -> dict:
    """Mean joint loss over fixed windows of held-out scenes (no gradients)."""
    totals = {"joint": 0.0, "recon": 0.0, "vl": 0.0, "md": 0.0}
    with no_grad():
        for scene in scenes:
            k = min(cfg.stage2_frames, len(scene.frames))
            window = scene.frames[:k]
            preds = predict_window(window, params, cfg)
            joint, recon, vl, md = _window_joint_loss(preds, params, cfg,
                                                      scene_norm(scene))
            totals["joint"] += joint.item()
            totals["recon"] += recon.item()
            totals["vl"] += vl.item()
            totals["md"] += md.item()
    n = max(len(scenes), 1)
    return {k: v / n for k, v in totals.items()}


def compare_strategies(cfg_base: RunConfig, strategies: list[str],
                       data_sizes: list[int], seeds: list[int],
                       out_csv: str | Path | None = None) -> list[dict]:
    """Final held-out joint loss per (strategy, data size, seed); CSV rows.

    Strategies at the same (seed, size) share the training scenes; data
    sizes are nested prefixes of one scene list per seed.
    """
    if len(strategies) < 1 or len(data_sizes) < 1:
        raise DegenerateInputError("need at least one strategy and one size")
    rows = []
    for seed in seeds:
        cfg_seed = RunConfig.from_json({**cfg_base.to_json(), "seed": seed})
        all_scenes = generate_scenes(cfg_seed, count=max(data_sizes))
        held_out = generate_scenes(cfg_seed, count=4, held_out=True)
        for size in data_sizes:
            scenes = all_scenes[:size]
            for strategy in strategies:
                cfg = RunConfig.from_json({**cfg_seed.to_json(),
                                           "strategy": strategy,
                                           "n_scenes": size})
                params, _ = train(cfg, scenes)
                result = evaluate_test_loss(cfg, params, held_out)
                rows.append({"strategy": strategy, "data_size": size,
                             "seed": seed,
                             "test_loss": result["joint"],
                             "recon": result["recon"],
                             "vl": result["vl"],
                             "md": result["md"]})
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["strategy", "data_size",
                                                    "seed", "test_loss",
                                                    "recon", "vl", "md"])
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    return rows
