"""Training objectives.

Stage 1 distills the adapter streams against geometry and semantics
teachers: per-token squared L2 between unit-normalized tokens, mean
(1 - cosine), and a Gram-matrix structural-consistency term over the
concatenated normalized streams. Stage 2 is a joint loss of simplified
reconstruction terms (geodesic pose angle^2 + translation L2, masked L1
depth, L1 between back-projected point maps), a cross-entropy proxy for
the language branch, and the robust log-depth metric term
b^2 + mean((e - b)^2 / (1 + alpha |e - b|)).

Every loss returns a scalar Tensor so gradients flow; call .item() for the
float value. totals are composed as (a + b) + c so logged components re-add
bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError, ParameterError, ShapeError, StateError
from .geometry import CameraModel, DepthMap
from .numkit import (
    MlpParams, Tensor, TokenSet, arccos, as_tensor, concat, exp, log, matmul,
    mlp, tabs, tmean, tsum,
)
from .patch3d import Patch3DTokens
from .recon import CameraPrediction

_NORM_GUARD = 1e-12


def _tokens(x) -> Tensor:
    t = x.tokens if isinstance(x, TokenSet) else as_tensor(x)
    if t.ndim != 2:
        raise ShapeError("token losses need [N, C] inputs")
    return t


def _unit_rows(t: Tensor, what: str) -> Tensor:
    norms = np.sqrt((t.data * t.data).sum(axis=1))
    if norms.min() <= _NORM_GUARD:
        raise DegenerateInputError(f"zero-norm token in {what}")
    sq = tsum(t * t, axis=1, keepdims=True)
    return t * (sq ** -0.5)


def geo_feat_loss(student, teacher) -> Tensor:
    """Mean squared L2 distance between unit-normalized token rows; range [0, 4]."""
    s, t = _tokens(student), _tokens(teacher)
    if s.shape != t.shape:
        raise ShapeError(f"student/teacher shapes differ: {s.shape} vs {t.shape}")
    d = _unit_rows(s, "student") - _unit_rows(t, "teacher")
    return tmean(tsum(d * d, axis=1))


def lang_feat_loss(student, teacher) -> Tensor:
    """Mean per-token (1 - cosine similarity); range [0, 2]."""
    s, t = _tokens(student), _tokens(teacher)
    if s.shape != t.shape:
        raise ShapeError(f"student/teacher shapes differ: {s.shape} vs {t.shape}")
    cos = tsum(_unit_rows(s, "student") * _unit_rows(t, "teacher"), axis=1)
    return tmean(1.0 - cos)


def structural_consistency(stu_geom, stu_lang, tea_geom, tea_lang) -> Tensor:
    """||Z_stu Z_stu^T - Z_tea Z_tea^T||_F^2 / M^2 over concatenated normalized tokens."""
    zs = concat([_unit_rows(_tokens(stu_geom), "student geom"),
                 _unit_rows(_tokens(stu_lang), "student lang")], axis=0)
    zt = concat([_unit_rows(_tokens(tea_geom), "teacher geom"),
                 _unit_rows(_tokens(tea_lang), "teacher lang")], axis=0)
    if zs.shape[0] != zt.shape[0]:
        raise ShapeError("student/teacher token totals differ")
    m = zs.shape[0]
    diff = matmul(zs, zs.T) - matmul(zt, zt.T)
    return tsum(diff * diff) * (1.0 / (m * m))


@dataclass
class DistillResult:
    geo: Tensor
    lang: Tensor
    sc: Tensor
    total: Tensor


def distill_loss(stu_geom, stu_lang, tea_geom, tea_lang, lam: float = 0.5,
                 use_geo: bool = True, use_lang: bool = True) -> DistillResult:
    """geo + lang + lam * sc; the single-teacher variant drops one feature term
    and builds the Gram matrices from the remaining stream only."""
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    if not (use_geo or use_lang):
        raise ParameterError("at least one teacher must be active")
    zero = Tensor(0.0)
    geo = geo_feat_loss(stu_geom, tea_geom) if use_geo else zero
    lang = lang_feat_loss(stu_lang, tea_lang) if use_lang else zero
    if use_geo and use_lang:
        sc = structural_consistency(stu_geom, stu_lang, tea_geom, tea_lang)
    else:
        stu = stu_geom if use_geo else stu_lang
        tea = tea_geom if use_geo else tea_lang
        zs = _unit_rows(_tokens(stu), "student")
        zt = _unit_rows(_tokens(tea), "teacher")
        m = zs.shape[0]
        diff = matmul(zs, zs.T) - matmul(zt, zt.T)
        sc = tsum(diff * diff) * (1.0 / (m * m))
    total = (geo + lang) + lam * sc
    return DistillResult(geo=geo, lang=lang, sc=sc, total=total)


# ----------------------------------------------------------------------
# metric depth
# ----------------------------------------------------------------------

def metric_depth_loss(pred, gt, alpha: float = 1.0, eps: float = 1e-6) -> Tensor:
    """b^2 + mean((e - b)^2 / (1 + alpha |e - b|)) over valid pixels,
    e = log(pred + eps) - log(gt + eps), b = mean(e)."""
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    mask = None
    if isinstance(pred, DepthMap):
        mask = pred.valid_mask
        pred = Tensor(pred.values)
    if isinstance(gt, DepthMap):
        mask = gt.valid_mask if mask is None else (mask & gt.valid_mask)
        gt_vals = gt.values
    else:
        gt_vals = np.asarray(gt, dtype=np.float64)
    pred = as_tensor(pred)
    if pred.data.shape != gt_vals.shape:
        raise ShapeError("pred/gt depth shapes differ")
    if mask is None:
        mask = np.ones(gt_vals.shape, dtype=bool)
    if not mask.any():
        raise DegenerateInputError("no valid pixels for the metric depth loss")

    idx = np.nonzero(mask.reshape(-1))[0]
    p = pred.reshape(pred.size)[idx]
    g = Tensor(gt_vals.reshape(-1)[idx])
    e = log(p + eps) - log(g + eps)
    b = tmean(e)
    r = e - b
    local = tmean(r * r / (1.0 + alpha * tabs(r)))
    return b * b + local


# ----------------------------------------------------------------------
# reconstruction task loss
# ----------------------------------------------------------------------

def _as_prediction(cam) -> CameraPrediction:
    return cam if isinstance(cam, CameraPrediction) else CameraPrediction.from_camera(cam)


def rotation_geodesic_sq(pred_rot: Tensor, gt_rot: np.ndarray) -> Tensor:
    """Squared geodesic angle between an in-graph rotation and a fixed one."""
    rel = matmul(pred_rot, Tensor(np.asarray(gt_rot).T))
    trace = rel[0, 0] + rel[1, 1] + rel[2, 2]
    angle = arccos((trace - 1.0) * 0.5)
    return angle * angle


def backproject_grid_tensor(depth: Tensor, cam: CameraPrediction,
                            mask: np.ndarray) -> Tensor:
    """In-graph dense back-projection of masked pixels -> [M, 3] world points."""
    h, w = depth.shape
    jj, ii = np.nonzero(mask)
    d = depth.reshape(h * w)[jj * w + ii].reshape(-1, 1)
    px = Tensor(np.stack([ii - cam.cx, jj - cam.cy], axis=1))  # offsets [M, 2]
    inv_f = concat([(1.0 / cam.fx).reshape(1), (1.0 / cam.fy).reshape(1)], axis=0)
    xy = px * inv_f.reshape(1, 2) * d
    cam_pts = concat([xy, d], axis=1)                           # [M, 3] camera frame
    return matmul(cam_pts - cam.translation.reshape(1, 3), cam.rotation_tensor())


@dataclass
class ReconLossResult:
    pose: Tensor
    depth: Tensor
    pointmap: Tensor
    total: Tensor


def recon_task_loss(pred_cam, gt_cam: CameraModel, pred_depth,
                    gt_depth: DepthMap) -> ReconLossResult:
    """pose angle^2 + ||t - t_gt||^2, masked L1 depth, L1 point map; unit weights."""
    pred = _as_prediction(pred_cam)
    if isinstance(pred_depth, DepthMap):
        if pred_depth.scale_kind != gt_depth.scale_kind and not (
                {pred_depth.scale_kind, gt_depth.scale_kind} <= {"metric", "ground_truth"}):
            raise StateError("pred/gt depth scale kinds differ")
        pred_vals = Tensor(pred_depth.values)
        mask = pred_depth.valid_mask & gt_depth.valid_mask
    else:
        pred_vals = as_tensor(pred_depth)
        mask = gt_depth.valid_mask
    if pred_vals.shape != gt_depth.shape:
        raise ShapeError("pred/gt depth shapes differ")
    if not mask.any():
        raise DegenerateInputError("no valid pixels for the reconstruction loss")

    t_diff = pred.translation - Tensor(gt_cam.translation)
    pose = rotation_geodesic_sq(pred.rotation_tensor(), gt_cam.rotation) + tsum(t_diff * t_diff)

    idx = np.nonzero(mask.reshape(-1))[0]
    gt_flat = gt_depth.values.reshape(-1)[idx]
    depth_l1 = tmean(tabs(pred_vals.reshape(pred_vals.size)[idx] - Tensor(gt_flat)))

    pred_pts = backproject_grid_tensor(pred_vals, pred, mask)
    gt_pts = _gt_points(gt_depth, gt_cam, mask)
    pointmap = tmean(tabs(pred_pts - Tensor(gt_pts)))

    total = (pose + depth_l1) + pointmap
    return ReconLossResult(pose=pose, depth=depth_l1, pointmap=pointmap, total=total)


def _gt_points(gt_depth: DepthMap, gt_cam: CameraModel, mask: np.ndarray) -> np.ndarray:
    jj, ii = np.nonzero(mask)
    d = gt_depth.values[jj, ii]
    rays = np.stack([(ii - gt_cam.cx) / gt_cam.fx, (jj - gt_cam.cy) / gt_cam.fy,
                     np.ones_like(d)], axis=1)
    return (rays * d[:, None] - gt_cam.translation) @ gt_cam.rotation


# ----------------------------------------------------------------------
# vision-language proxy
# ----------------------------------------------------------------------

def vl_proxy_loss(t3d: Patch3DTokens, labels: np.ndarray, head: MlpParams) -> Tensor:
    """Mean cross-entropy of an MLP classifier over 3D patch tokens."""
    n_classes = head.out_dim
    if n_classes < 1:
        raise ParameterError("classifier head has zero classes")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != t3d.tokens.shape[0]:
        raise ShapeError("label count differs from token count")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DomainError(f"labels must lie in [0, {n_classes})")
    logits = mlp(t3d.tokens, head)
    shift = Tensor(logits.data.max(axis=1, keepdims=True))  # detached, stabilizes exp
    z = logits - shift
    log_norm = log(tsum(exp(z), axis=1, keepdims=True))
    onehot = np.zeros((labels.shape[0], n_classes))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    picked = tsum((z - log_norm) * Tensor(onehot), axis=1)
    return -tmean(picked)


# ----------------------------------------------------------------------
# reporting
# ----------------------------------------------------------------------

@dataclass
class LossReport:
    """Float snapshot of every component; totals re-add bit-exactly."""

    geo_feat: float = 0.0
    lang_feat: float = 0.0
    sc: float = 0.0
    distill_total: float = 0.0
    recon_task: float = 0.0
    vl_task: float = 0.0
    md: float = 0.0
    joint_total: float = 0.0
    lam: float = 0.5
    alpha: float = 1.0

    def to_json(self) -> dict:
        return {
            "geo_feat": self.geo_feat, "lang_feat": self.lang_feat, "sc": self.sc,
            "distill_total": self.distill_total, "recon_task": self.recon_task,
            "vl_task": self.vl_task, "md": self.md, "joint_total": self.joint_total,
            "lambda": self.lam, "alpha": self.alpha,
        }

    @staticmethod
    def from_stage1(res: DistillResult, lam: float, alpha: float) -> "LossReport":
        return LossReport(geo_feat=res.geo.item(), lang_feat=res.lang.item(),
                          sc=res.sc.item(), distill_total=res.total.item(),
                          lam=lam, alpha=alpha)

    @staticmethod
    def from_stage2(recon: float, vl: float, md: float, joint: float,
                    lam: float, alpha: float) -> "LossReport":
        return LossReport(recon_task=recon, vl_task=vl, md=md, joint_total=joint,
                          lam=lam, alpha=alpha)
