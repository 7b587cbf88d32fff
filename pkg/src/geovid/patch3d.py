"""Lifting 2D tokens into 3D patch tokens.

A pixel (i, j) with depth d back-projects through the inverse intrinsics
and inverse pose to the world point R^-1 K^-1 [i, j, 1]^T d - R^-1 t.
Semantic tokens get an MLP embedding of their anchor point added on top:
t3d = lang + embed(anchor). Anchors are sampled at patch centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ParameterError, ShapeError, StateError
from .geometry import GROUND_TRUTH, METRIC, CameraModel, DepthMap, bilinear_sample
from .numkit import MlpParams, Tensor, TokenSet, as_tensor, mlp
from .recon import _patch_grid


@dataclass
class PointCloud:
    points: np.ndarray              # [M, 3] world-frame meters
    colors: np.ndarray | None = None  # [M, 3] in [0, 1]
    source_frame: int | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ParameterError("point coordinates must be finite")
        self.points = p
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if c.shape[0] != p.shape[0]:
                raise ShapeError("colors count differs from points count")
            self.colors = np.clip(c, 0.0, 1.0)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class Patch3DTokens:
    tokens: Tensor            # [N, C]
    anchor_points: np.ndarray  # [N, 3]

    def __post_init__(self):
        self.anchor_points = np.asarray(self.anchor_points, dtype=np.float64).reshape(-1, 3)
        if self.tokens.shape[0] != self.anchor_points.shape[0]:
            raise ShapeError("token count differs from anchor count")


def backproject(pixel: tuple[float, float], depth: float,
                cam: CameraModel) -> np.ndarray:
    """Pixel (i=column, j=row) plus depth -> world point."""
    if depth <= 0:
        raise DomainError(f"depth must be positive, got {depth}")
    i, j = pixel
    ray = np.array([(i - cam.cx) / cam.fx, (j - cam.cy) / cam.fy, 1.0])
    return cam.rotation.T @ (ray * depth - cam.translation)


def backproject_grid(depth: DepthMap, cam: CameraModel,
                     mask: np.ndarray | None = None) -> np.ndarray:
    """All valid pixels of a depth map -> [M, 3] world points."""
    h, w = depth.shape
    m = depth.valid_mask if mask is None else (depth.valid_mask & mask)
    jj, ii = np.nonzero(m)
    d = depth.values[jj, ii]
    rays = np.stack([(ii - cam.cx) / cam.fx, (jj - cam.cy) / cam.fy,
                     np.ones_like(d)], axis=1)
    return (rays * d[:, None] - cam.translation) @ cam.rotation


def project(point: np.ndarray, cam: CameraModel) -> tuple[tuple[float, float], float]:
    """World point -> ((i, j), depth); exact inverse of backproject."""
    c = cam.rotation @ np.asarray(point, dtype=np.float64) + cam.translation
    if c[2] <= 0:
        raise DomainError("point is behind the camera")
    i = cam.fx * c[0] / c[2] + cam.cx
    j = cam.fy * c[1] / c[2] + cam.cy
    return (float(i), float(j)), float(c[2])


def positional_embed(point, p: MlpParams) -> Tensor:
    """3-vector (or [N, 3] batch) -> embedding through the positional MLP."""
    t = as_tensor(point)
    squeeze = t.ndim == 1
    if squeeze:
        t = t.reshape(1, 3)
    if t.shape[1] != 3 or p.in_dim != 3:
        raise ShapeError("positional embedding expects 3-d points")
    out = mlp(t, p)
    return out.reshape(p.out_dim) if squeeze else out


def patch_anchor_points(depth: DepthMap, cam: CameraModel,
                        patch_size: int) -> np.ndarray:
    """World anchor per patch: depth sampled bilinearly at the patch center."""
    h, w = depth.shape
    if h % patch_size != 0 or w % patch_size != 0:
        raise ShapeError(f"image {h}x{w} not a multiple of patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    cy = np.repeat(np.arange(gh) * patch_size + (patch_size - 1) / 2.0, gw)
    cx = np.tile(np.arange(gw) * patch_size + (patch_size - 1) / 2.0, gh)
    d = bilinear_sample(depth.values, cx, cy)
    rays = np.stack([(cx - cam.cx) / cam.fx, (cy - cam.cy) / cam.fy,
                     np.ones_like(d)], axis=1)
    return (rays * d[:, None] - cam.translation) @ cam.rotation


def fuse_tokens(lang: TokenSet, depth: DepthMap, cam: CameraModel,
                p: MlpParams, patch_size: int = 14) -> Patch3DTokens:
    """t3d = lang + positional_embed(anchor), one anchor per patch token."""
    if depth.scale_kind not in (METRIC, GROUND_TRUTH):
        raise StateError(f"fuse_tokens needs metric depth, got '{depth.scale_kind}'")
    _patch_grid(lang.count, depth.shape, patch_size)
    anchors = patch_anchor_points(depth, cam, patch_size)
    emb = positional_embed(anchors, p)
    if emb.shape[1] != lang.dim:
        raise ShapeError("positional embedding dim differs from token dim")
    return Patch3DTokens(tokens=lang.tokens + emb, anchor_points=anchors)


# ----------------------------------------------------------------------
# PLY export
# ----------------------------------------------------------------------

def write_ply(path: str | Path, cloud: PointCloud) -> None:
    """ASCII PLY, deterministic formatting; colors as uchar when present."""
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
             "property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    rows = []
    if cloud.colors is None:
        for x, y, z in cloud.points:
            rows.append(f"{x:.10g} {y:.10g} {z:.10g}")
    else:
        rgb = np.clip(np.round(cloud.colors * 255), 0, 255).astype(int)
        for (x, y, z), (r, g, b) in zip(cloud.points, rgb):
            rows.append(f"{x:.10g} {y:.10g} {z:.10g} {r} {g} {b}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines + rows))
        fh.write("\n")


def read_ply(path: str | Path) -> PointCloud:
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ParameterError("not a PLY file")
        n = 0
        has_color = False
        for line in fh:
            token = line.strip()
            if token.startswith("element vertex"):
                n = int(token.split()[-1])
            elif token.startswith("property uchar red"):
                has_color = True
            elif token == "end_header":
                break
        pts = np.zeros((n, 3))
        cols = np.zeros((n, 3)) if has_color else None
        for i in range(n):
            parts = fh.readline().split()
            pts[i] = [float(v) for v in parts[:3]]
            if has_color:
                cols[i] = [int(v) / 255.0 for v in parts[3:6]]
    return PointCloud(points=pts, colors=cols)
