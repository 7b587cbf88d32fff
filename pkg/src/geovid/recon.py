"""Global-frame attention backbone plus camera and relative-depth heads.

The backbone alternates frame-local self-attention (each frame's patch
tokens with its camera/register tokens) and global self-attention over all
frames jointly. Blocks are residual attention + residual MLP, bias-free
projections, QK-Norm on by default here.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .geometry import RELATIVE, CameraModel, DepthMap, quaternion_to_rotation
from .numkit import (
    MhaParams, MlpParams, Role, Tensor, TokenSet,
    concat, matmul, maximum, mha, mlp, require_role, rms_norm, sigmoid,
    softplus, tan, tmean,
)

FOV_MIN = 0.30   # radians; sigmoid(raw) interpolates inside this range
FOV_MAX = 2.40


@dataclass
class BackboneBlock:
    attn: MhaParams
    mlp: MlpParams


@dataclass
class BackboneParams:
    """Even-indexed blocks attend frame-locally, odd-indexed globally."""

    blocks: list[BackboneBlock]
    camera_init: Tensor     # [n_cam, C], shared across frames
    register_init: Tensor   # [n_reg, C], shared across frames

    def __post_init__(self):
        if len(self.blocks) < 2 or len(self.blocks) % 2 != 0:
            raise ParameterError("backbone needs an even block count >= 2")
        if self.camera_init.shape[0] < 1 or self.register_init.shape[0] < 1:
            raise ParameterError("need at least one camera and one register token")

    @staticmethod
    def init(rng: np.random.Generator, c: int, heads: int, blocks: int = 4,
             n_camera: int = 1, n_register: int = 4,
             qk_norm: bool = True) -> "BackboneParams":
        blks = [BackboneBlock(attn=MhaParams.init(rng, c, heads, qk_norm=qk_norm,
                                                  out_scale=0.5),
                              mlp=MlpParams.init(rng, c, out_scale=0.5))
                for _ in range(blocks)]
        return BackboneParams(
            blocks=blks,
            camera_init=Tensor(rng.standard_normal((n_camera, c)) / np.sqrt(c),
                               requires_grad=True),
            register_init=Tensor(rng.standard_normal((n_register, c)) / np.sqrt(c),
                                 requires_grad=True),
        )

    def tensors(self, prefix: str = "backbone") -> dict[str, Tensor]:
        out = {f"{prefix}.camera_init": self.camera_init,
               f"{prefix}.register_init": self.register_init}
        for i, blk in enumerate(self.blocks):
            out.update(blk.attn.tensors(f"{prefix}.b{i}.attn"))
            out.update(blk.mlp.tensors(f"{prefix}.b{i}.mlp"))
        return out


def _block(x: Tensor, blk: BackboneBlock) -> Tensor:
    """Pre-norm residual block: branch inputs are RMS-normalized so the
    stream cannot amplify multiplicatively across blocks."""
    n = rms_norm(x)
    x = x + mha(n, n, n, blk.attn)
    return x + mlp(rms_norm(x), blk.mlp)


def gfa_backbone(frames: list[TokenSet], p: BackboneParams
                 ) -> tuple[list[TokenSet], list[TokenSet]]:
    """Refine per-frame geometry tokens; returns (patch tokens, camera tokens).

    Camera and register tokens are appended to every frame from the shared
    learned init; register outputs are dropped after the last block.
    """
    if not frames:
        raise ShapeError("backbone needs at least one frame")
    c = frames[0].dim
    for f in frames:
        require_role(f, Role.GEOM)
        if f.dim != c:
            raise ShapeError("all frames must share the token dim")

    n_cam = p.camera_init.shape[0]
    counts = [f.count for f in frames]
    states = [concat([f.tokens, p.camera_init, p.register_init], axis=0)
              for f in frames]

    for i, blk in enumerate(p.blocks):
        if i % 2 == 0:
            states = [_block(x, blk) for x in states]
        else:
            joint = _block(concat(states, axis=0), blk)
            states, offset = [], 0
            for f, n in zip(frames, counts):
                rows = n + n_cam + p.register_init.shape[0]
                states.append(joint[offset:offset + rows, :])
                offset += rows

    patch_out, camera_out = [], []
    for f, n, x in zip(frames, counts, states):
        patch_out.append(TokenSet(x[0:n, :], Role.GEOM, f.frame_index))
        camera_out.append(TokenSet(x[n:n + n_cam, :], Role.CAMERA, f.frame_index))
    return patch_out, camera_out


# ----------------------------------------------------------------------
# camera head
# ----------------------------------------------------------------------

@dataclass
class CameraHeadParams:
    """MLP from pooled camera tokens to [quat(4), translation(3), fov(1)].

    The second layer is zero-initialized so the head starts at the identity
    pose (quaternion offset (1,0,0,0), zero translation).
    """

    mlp: MlpParams

    @staticmethod
    def init(rng: np.random.Generator, c: int) -> "CameraHeadParams":
        return CameraHeadParams(mlp=MlpParams.init(rng, c, 8, zero_out=True))

    def tensors(self, prefix: str = "camera_head") -> dict[str, Tensor]:
        return self.mlp.tensors(f"{prefix}.mlp")


@dataclass
class CameraPrediction:
    """Differentiable camera: unit quaternion, translation and intrinsics.

    The quaternion is normalized in-graph, so `rotation_tensor()` is always
    orthonormal. `to_camera()` detaches into a plain CameraModel.
    """

    quat: Tensor          # [4], unit norm
    translation: Tensor   # [3]
    fx: Tensor            # scalar []
    fy: Tensor            # scalar []
    cx: float
    cy: float

    def rotation_tensor(self) -> Tensor:
        w, x, y, z = (self.quat[i] for i in range(4))
        one = Tensor(1.0)
        entries = [
            one - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
            2.0 * (x * y + w * z), one - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
            2.0 * (x * z - w * y), 2.0 * (y * z + w * x), one - 2.0 * (x * x + y * y),
        ]
        return concat([e.reshape(1) for e in entries], axis=0).reshape(3, 3)

    def to_camera(self, scale_kind: str = RELATIVE) -> CameraModel:
        q = self.quat.data / np.linalg.norm(self.quat.data)
        return CameraModel(
            fx=float(self.fx.data), fy=float(self.fy.data),
            cx=self.cx, cy=self.cy,
            rotation=quaternion_to_rotation(q),
            translation=self.translation.data.copy(),
            scale_kind=scale_kind,
        )

    @staticmethod
    def from_camera(cam: CameraModel) -> "CameraPrediction":
        from .geometry import rotation_to_quaternion
        return CameraPrediction(
            quat=Tensor(rotation_to_quaternion(cam.rotation)),
            translation=Tensor(cam.translation),
            fx=Tensor(cam.fx), fy=Tensor(cam.fy),
            cx=cam.cx, cy=cam.cy,
        )


def camera_head(camera_tokens: TokenSet, p: CameraHeadParams,
                image_size: tuple[int, int]) -> CameraPrediction:
    """Pooled camera tokens -> relative-scale pose and field-of-view intrinsics."""
    require_role(camera_tokens, Role.CAMERA)
    h, w = image_size
    pooled = rms_norm(tmean(camera_tokens.tokens, axis=0, keepdims=True))  # [1, C]
    raw = mlp(pooled, p.mlp).reshape(8)
    q_raw = raw[0:4] + Tensor(np.array([1.0, 0.0, 0.0, 0.0]))
    q_norm = ((q_raw * q_raw).sum() + 1e-12) ** -0.5
    quat = q_raw * q_norm
    # sigmoid-bounded field of view; raw 0 lands mid-range
    fov = FOV_MIN + (FOV_MAX - FOV_MIN) * sigmoid(raw[7])
    fx = (w / 2.0) / tan(fov * 0.5)
    return CameraPrediction(
        quat=quat,
        translation=raw[4:7],
        fx=fx, fy=fx,  # square pixels
        cx=(w - 1) / 2.0, cy=(h - 1) / 2.0,
    )


# ----------------------------------------------------------------------
# relative-depth head
# ----------------------------------------------------------------------

@dataclass
class DepthHeadParams:
    mlp: MlpParams          # C -> 1 per-patch logit
    patch_size: int = 14

    @staticmethod
    def init(rng: np.random.Generator, c: int, patch_size: int = 14) -> "DepthHeadParams":
        return DepthHeadParams(mlp=MlpParams.init(rng, c, 1, hidden=c),
                               patch_size=patch_size)

    def tensors(self, prefix: str = "depth_head") -> dict[str, Tensor]:
        return self.mlp.tensors(f"{prefix}.mlp")


@functools.lru_cache(maxsize=32)
def upsample_matrix(gh: int, gw: int, h: int, w: int) -> np.ndarray:
    """[h*w, gh*gw] bilinear interpolation from patch-grid cells to pixels.

    Output pixel i maps to grid coordinate (i + 0.5) / patch - 0.5 (half-pixel
    convention), clamped at the grid border.
    """
    ph, pw = h / gh, w / gw
    gy = np.clip((np.arange(h) + 0.5) / ph - 0.5, 0.0, gh - 1.0)
    gx = np.clip((np.arange(w) + 0.5) / pw - 0.5, 0.0, gw - 1.0)
    y0 = np.floor(gy).astype(int)
    x0 = np.floor(gx).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = gy - y0
    fx = gx - x0
    mat = np.zeros((h * w, gh * gw))
    rows = np.arange(h * w)
    yy0 = np.repeat(y0, w); yy1 = np.repeat(y1, w); ffy = np.repeat(fy, w)
    xx0 = np.tile(x0, h); xx1 = np.tile(x1, h); ffx = np.tile(fx, h)
    np.add.at(mat, (rows, yy0 * gw + xx0), (1 - ffy) * (1 - ffx))
    np.add.at(mat, (rows, yy0 * gw + xx1), (1 - ffy) * ffx)
    np.add.at(mat, (rows, yy1 * gw + xx0), ffy * (1 - ffx))
    np.add.at(mat, (rows, yy1 * gw + xx1), ffy * ffx)
    return mat


def _patch_grid(n_tokens: int, image_size: tuple[int, int], ps: int) -> tuple[int, int]:
    h, w = image_size
    if h % ps != 0 or w % ps != 0:
        raise ShapeError(f"image {h}x{w} not a multiple of patch size {ps}")
    gh, gw = h // ps, w // ps
    if n_tokens != gh * gw:
        raise ShapeError(f"{n_tokens} tokens do not tile a {gh}x{gw} patch grid")
    return gh, gw


def depth_head_tensor(patch_tokens: TokenSet, image_size: tuple[int, int],
                      p: DepthHeadParams) -> Tensor:
    """In-graph relative depth: per-patch logits, bilinear upsample, softplus.

    Floored at 1e-6 so a diverged logit cannot underflow softplus to an
    exact zero; any logit above -13 is untouched.
    """
    h, w = image_size
    gh, gw = _patch_grid(patch_tokens.count, image_size, p.patch_size)
    logits = mlp(rms_norm(patch_tokens.tokens), p.mlp)  # [P, 1]
    up = Tensor(upsample_matrix(gh, gw, h, w))
    return maximum(softplus(matmul(up, logits)), 1e-6).reshape(h, w)


def depth_head(patch_tokens: TokenSet, image_size: tuple[int, int],
               p: DepthHeadParams) -> DepthMap:
    """Strictly positive relative depth map (detached)."""
    values = depth_head_tensor(patch_tokens, image_size, p)
    return DepthMap(values.data.copy(), scale_kind=RELATIVE)
