"""Bin-based metric depth.

Each pixel carries a categorical distribution over depth-bin centers; the
prediction is the expectation sum_k p(k) * c(k). Probabilities come from a
cumulative-link ordinal construction over boundary logits (plain softmax
available as a fallback), and the base centers are refined per pixel by a
tanh-bounded shift so the per-pixel centers stay strictly increasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .geometry import METRIC, DepthMap
from .numkit import (
    MlpParams, Tensor, TokenSet, as_tensor, concat, matmul, maximum, mlp,
    rms_norm, sigmoid, softmax, tanh, tsum,
)
from .recon import _patch_grid, upsample_matrix


@dataclass
class BinConfig:
    """Shared bin layout: strictly increasing positive centers in meters."""

    centers: np.ndarray        # [N] base centers c_k
    d_min: float
    d_max: float
    max_shift: float = 0.3     # fraction of the local bin width, must stay < 0.5

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        self.centers = c
        if c.ndim != 1 or c.size < 2:
            raise ParameterError("need at least 2 bin centers")
        if self.d_min <= 0 or self.d_min >= self.d_max:
            raise ParameterError("require 0 < d_min < d_max")
        if c[0] < self.d_min or c[-1] > self.d_max or np.any(np.diff(c) <= 0):
            raise ParameterError("centers must be strictly increasing inside [d_min, d_max]")
        if self.max_shift >= 0.5 or self.max_shift < 0:
            raise ParameterError("max_shift must lie in [0, 0.5)")

    @property
    def n_bins(self) -> int:
        return self.centers.size

    def local_widths(self) -> np.ndarray:
        """Per-bin shift budget: the smaller adjacent gap (single gap at edges)."""
        gaps = np.diff(self.centers)
        w = np.empty_like(self.centers)
        w[0] = gaps[0]
        w[-1] = gaps[-1]
        if self.centers.size > 2:
            w[1:-1] = np.minimum(gaps[:-1], gaps[1:])
        return w

    def to_json(self) -> dict:
        return {"n_bins": self.n_bins, "d_min": self.d_min, "d_max": self.d_max,
                "max_shift": self.max_shift}


def init_bins(n: int, d_min: float, d_max: float, max_shift: float = 0.3) -> BinConfig:
    """Log-uniform centers: c_k = exp(ln d_min + (k - 1/2)/N * (ln d_max - ln d_min))."""
    if n < 2:
        raise ParameterError(f"need at least 2 bins, got {n}")
    if d_min <= 0 or d_min >= d_max:
        raise ParameterError("require 0 < d_min < d_max")
    k = np.arange(1, n + 1)
    ln = np.log(d_min) + (k - 0.5) / n * (np.log(d_max) - np.log(d_min))
    return BinConfig(centers=np.exp(ln), d_min=d_min, d_max=d_max, max_shift=max_shift)


@dataclass
class PixelBins:
    """Per-pixel simplex over bins plus per-pixel refined centers."""

    probs: Tensor             # [HW, N], rows on the simplex
    refined_centers: Tensor   # [HW, N], strictly increasing per row
    image_size: tuple[int, int]

    def __post_init__(self):
        if self.probs.shape != self.refined_centers.shape:
            raise ShapeError("probs and centers must have equal shapes")
        h, w = self.image_size
        if self.probs.shape[0] != h * w:
            raise ShapeError("pixel count does not match image size")


def bin_logits_to_probs(logits: Tensor, ordinal: bool = True) -> Tensor:
    """Logits [HW, N] -> per-pixel simplex [HW, N].

    Ordinal mode (cumulative link): sigma(logit_k) models P(depth > boundary_k)
    for the N-1 interior boundaries; with P(>0) = 1 and P(>N) = 0 the bin mass
    is the difference of adjacent exceedance probabilities, clamped at zero and
    renormalized to guard monotonicity violations. The last logit column only
    participates in the softmax fallback.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError("bin logits must be [HW, N]")
    if not ordinal:
        return softmax(logits, axis=-1)
    n = logits.shape[1]
    if n < 2:
        raise ShapeError("ordinal normalization needs at least 2 bins")
    q = sigmoid(logits[:, 0:n - 1])                   # P(depth > boundary_k)
    hw = logits.shape[0]
    ones = Tensor(np.ones((hw, 1)))
    zeros = Tensor(np.zeros((hw, 1)))
    q_full = concat([ones, q, zeros], axis=1)          # [HW, N+1]
    raw = q_full[:, 0:n] - q_full[:, 1:n + 1]          # telescoping mass, sums to 1
    clamped = maximum(raw, 0.0)
    total = tsum(clamped, axis=1, keepdims=True)       # >= 1 by telescoping
    return clamped / total


def bounded_centers(cfg: BinConfig, raw: Tensor) -> Tensor:
    """c_k + max_shift * width_k * tanh(raw_k): rows stay strictly increasing."""
    if raw.ndim != 2 or raw.shape[1] != cfg.n_bins:
        raise ShapeError("raw shifts must be [rows, n_bins]")
    delta = cfg.max_shift * Tensor(cfg.local_widths()) * tanh(raw)
    return Tensor(cfg.centers) + delta


def refine_centers(cfg: BinConfig, features: Tensor, r: MlpParams) -> Tensor:
    """Per-pixel centers c_k + max_shift * width_k * tanh(r_k(F_i)).

    The tanh bound with max_shift < 0.5 keeps every row strictly increasing.
    """
    features = as_tensor(features)
    if features.ndim != 2 or features.shape[1] != r.in_dim:
        raise ShapeError("feature dim does not match the refinement MLP")
    if r.out_dim != cfg.n_bins:
        raise ShapeError("refinement MLP must emit one shift per bin")
    return bounded_centers(cfg, mlp(features, r))


def expected_depth_tensor(pb: PixelBins) -> Tensor:
    """Per-pixel expectation over the refined centers, in-graph. [HW]."""
    return tsum(pb.probs * pb.refined_centers, axis=1)


def expected_depth(pb: PixelBins) -> DepthMap:
    """Metric depth map from the per-pixel expectation (detached)."""
    h, w = pb.image_size
    values = expected_depth_tensor(pb).data.reshape(h, w).copy()
    return DepthMap(values, scale_kind=METRIC)


@dataclass
class MetricDepthParams:
    """Per-pixel bin head operating on bilinearly upsampled patch features."""

    logits_mlp: MlpParams    # C -> N_bins boundary logits
    refine_mlp: MlpParams    # C -> N_bins center shifts
    bins: BinConfig
    ordinal: bool = True
    patch_size: int = 14

    @staticmethod
    def init(rng: np.random.Generator, c: int, bins: BinConfig,
             ordinal: bool = True, patch_size: int = 14) -> "MetricDepthParams":
        return MetricDepthParams(
            logits_mlp=MlpParams.init(rng, c, bins.n_bins, hidden=c),
            refine_mlp=MlpParams.init(rng, c, bins.n_bins, hidden=c, zero_out=True),
            bins=bins, ordinal=ordinal, patch_size=patch_size,
        )

    def tensors(self, prefix: str = "metric") -> dict[str, Tensor]:
        out = self.logits_mlp.tensors(f"{prefix}.logits_mlp")
        out.update(self.refine_mlp.tensors(f"{prefix}.refine_mlp"))
        return out


def predict_metric_depth(patch_tokens: TokenSet, image_size: tuple[int, int],
                         p: MetricDepthParams) -> tuple[PixelBins, Tensor]:
    """Patch tokens -> (per-pixel bins, in-graph metric depth [HW]).

    The two MLPs run per patch; their raw outputs (boundary logits and
    unbounded shifts) are bilinearly upsampled to pixels before the
    per-pixel sigmoid/tanh constructions, which keeps the per-pixel
    simplex and monotone-center guarantees while avoiding per-pixel MLPs.
    """
    h, w = image_size
    gh, gw = _patch_grid(patch_tokens.count, image_size, p.patch_size)
    up = Tensor(upsample_matrix(gh, gw, h, w))
    feats = rms_norm(patch_tokens.tokens)
    patch_logits = mlp(feats, p.logits_mlp)   # [P, N]
    patch_raw = mlp(feats, p.refine_mlp)      # [P, N]
    probs = bin_logits_to_probs(matmul(up, patch_logits), ordinal=p.ordinal)
    centers = bounded_centers(p.bins, matmul(up, patch_raw))
    pb = PixelBins(probs=probs, refined_centers=centers, image_size=image_size)
    return pb, expected_depth_tensor(pb)
