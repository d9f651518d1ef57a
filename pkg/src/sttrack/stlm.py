"""Spatio-temporal learning module.

Spatial block: past frames get their box mask fused into the BEV features,
then every frame is cut into an R x R layout of non-overlapping patches and
each patch is summarised into one token. Temporal block: the N x S token grid
(rows = time, oldest first; columns = space) is refined by sparse deformable
attention, and the current-frame row is folded back into the current BEV map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError
from .geometry import Box3D, GridConfig, rasterize_box_mask
from .numerics import (
    ParameterSet,
    Tensor,
    bilinear_sample,
    concat,
    conv2d,
    einsum2,
    linear,
    matmul,
    relu,
    reshape,
    softmax,
    stack,
    take,
    transpose,
    upsample_nearest,
)
from .pillars import FeatureMap

VARIANTS = ("full", "dot", "no_mask", "no_boxconv", "conv_patch", "dense", "pos_embed")


@dataclass(frozen=True)
class STLMConfig:
    patch_r: int = 4
    heads: int = 4
    samples: int = 4
    variant: str = "full"
    c2: int = 32
    c3: int = 64
    c4: int = 64

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown stlm variant {self.variant!r}; expected one of {VARIANTS}")
        if self.patch_r < 1 or self.heads < 1 or self.samples < 1:
            raise ConfigurationError("patch_r, heads and samples must be >= 1")
        if self.c3 % self.heads:
            raise ConfigurationError(f"c3={self.c3} not divisible by heads={self.heads}")

    def validate(self, grid: GridConfig, c1: int) -> None:
        if grid.W % self.patch_r or grid.H % self.patch_r:
            raise ConfigurationError(f"feature map {grid.H}x{grid.W} not divisible by patch_r={self.patch_r}")
        if c1 != self.c2:
            # the current frame skips mask fusion yet shares PatchConv with past frames
            raise ConfigurationError(f"c2={self.c2} must equal backbone channels c1={c1}")


@dataclass
class PatchTokens:
    tokens: Tensor  # S x C3, row-major over the R x R patch layout
    patch_r: int
    source_dims: tuple[int, int]

    @property
    def count(self) -> int:
        return self.tokens.shape[0]


@dataclass
class SpatioTemporalGrid:
    values: Tensor  # N x S x C3
    frame_ages: list[float]


# -- parameters -------------------------------------------------------------

def init_stlm_params(params: ParameterSet, cfg: STLMConfig, grid: GridConfig, c1: int,
                     prefix: str = "stlm") -> None:
    cfg.validate(grid, c1)
    c2, c3, c4 = cfg.c2, cfg.c3, cfg.c4
    L, K = cfg.heads, cfg.samples
    if cfg.variant not in ("no_mask", "dot"):
        params.uniform(f"{prefix}.maskconv.weight", (3, 3, 1, c1), 9)
        params.uniform(f"{prefix}.maskconv.bias", (c1,), 9)
    if cfg.variant not in ("no_mask", "no_boxconv"):
        params.uniform(f"{prefix}.boxconv.weight", (3, 3, c1, c2), 9 * c1)
        params.uniform(f"{prefix}.boxconv.bias", (c2,), 9 * c1)
    if cfg.variant == "conv_patch":
        params.uniform(f"{prefix}.patchconv.weight", (3, 3, c2, c3), 9 * c2)
        params.uniform(f"{prefix}.patchconv.bias", (c3,), 9 * c2)
    else:
        pr, pc = grid.H // cfg.patch_r, grid.W // cfg.patch_r
        params.uniform(f"{prefix}.patchconv.weight", (pr, pc, c2, c3), pr * pc * c2)
        params.uniform(f"{prefix}.patchconv.bias", (c3,), pr * pc * c2)
    a = f"{prefix}.attn"
    if cfg.variant == "dense":
        for name in ("query", "key"):
            params.uniform(f"{a}.{name}.weight", (c3, c3), c3)
            params.uniform(f"{a}.{name}.bias", (c3,), c3)
    else:
        params.uniform(f"{a}.offset.weight", (c3, L * K * 2), c3)
        params.uniform(f"{a}.offset.bias", (L * K * 2,), c3)
        params.uniform(f"{a}.score.weight", (c3, L * K), c3)
        params.uniform(f"{a}.score.bias", (L * K,), c3)
    params.uniform(f"{a}.value.weight", (c3, c3), c3)
    params.uniform(f"{a}.value.bias", (c3,), c3)
    params.uniform(f"{a}.out.weight", (c3, c3), c3)
    params.uniform(f"{a}.out.bias", (c3,), c3)
    params.uniform(f"{prefix}.lift.weight", (c3, c4), c3)
    params.uniform(f"{prefix}.lift.bias", (c4,), c3)
    params.uniform(f"{prefix}.fuse.weight", (3, 3, c4 + c1, c1), 9 * (c4 + c1))
    params.uniform(f"{prefix}.fuse.bias", (c1,), 9 * (c4 + c1))


def _p(params: ParameterSet, prefix: str, name: str) -> tuple[Tensor, Tensor]:
    return params[f"{prefix}.{name}.weight"], params[f"{prefix}.{name}.bias"]


# -- spatial learning block -------------------------------------------------

def mask_fusion(feature: FeatureMap, mask: np.ndarray, params: ParameterSet,
                variant: str = "full", prefix: str = "stlm") -> FeatureMap:
    """Inject a past box mask into that frame's features."""
    mask = np.asarray(mask, dtype=np.float64)
    rows, cols, c1 = feature.values.shape
    if mask.shape != (rows, cols):
        raise DimensionError(f"mask {mask.shape} does not match feature map {(rows, cols)}")
    F = feature.values
    if variant == "no_mask":
        return feature
    if variant == "dot":
        fused = F * np.repeat(mask[:, :, None], c1, axis=2)
    else:
        fused = conv2d(Tensor(mask[:, :, None]), *_p(params, prefix, "maskconv"), padding=1) + F
    if variant != "no_boxconv":
        fused = relu(conv2d(fused, *_p(params, prefix, "boxconv"), padding=1))
    return FeatureMap(fused, feature.grid, feature.frame_age)


def _patch_mean_kernel(pr: int, pc: int, channels: int) -> Tensor:
    w = np.zeros((pr, pc, channels, channels))
    w[:, :, np.arange(channels), np.arange(channels)] = 1.0 / (pr * pc)
    return Tensor(w)


def patchify(feature: FeatureMap, params: ParameterSet, R: int,
             variant: str = "full", prefix: str = "stlm") -> PatchTokens:
    rows, cols, _ = feature.values.shape
    if rows % R or cols % R:
        raise ConfigurationError(f"feature map {rows}x{cols} not divisible by R={R}")
    pr, pc = rows // R, cols // R
    w, b = _p(params, prefix, "patchconv")
    if variant == "conv_patch":
        dense = relu(conv2d(feature.values, w, b, padding=1))
        c3 = dense.shape[2]
        patches = conv2d(dense, _patch_mean_kernel(pr, pc, c3), Tensor(np.zeros(c3)), stride=(pr, pc))
    else:
        patches = conv2d(feature.values, w, b, stride=(pr, pc))
    tokens = reshape(patches, (R * R, patches.shape[2]))
    return PatchTokens(tokens, R, (rows, cols))


# -- temporal learning block ------------------------------------------------

def build_grid(tokens: Sequence[PatchTokens], ages: Sequence[float]) -> SpatioTemporalGrid:
    if len(tokens) != len(ages) or not tokens:
        raise DimensionError("need one age per token set and at least one frame")
    shapes = {t.tokens.shape for t in tokens}
    if len(shapes) != 1:
        raise DimensionError(f"token sets disagree on shape: {sorted(shapes)}")
    return SpatioTemporalGrid(stack([t.tokens for t in tokens], axis=0), [float(a) for a in ages])


def positional_embedding(n: int, s: int, channels: int) -> np.ndarray:
    """Sinusoidal embedding: first half of channels encodes time row, second half space column."""
    half = channels // 2
    pe = np.zeros((n, s, channels))

    def fill(pos: np.ndarray, width: int) -> np.ndarray:
        i = np.arange(width)
        freq = 1.0 / 10000.0 ** (2 * (i // 2) / max(width, 1))
        angle = pos[:, None] * freq
        return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))

    pe[:, :, :half] = fill(np.arange(n, dtype=float), half)[:, None, :]
    pe[:, :, half:] = fill(np.arange(s, dtype=float), channels - half)[None, :, :]
    return pe


def reference_points(n: int, s: int) -> np.ndarray:
    """(time, space) coordinate of every query token, row-major, shape (n*s, 2)."""
    t, x = np.meshgrid(np.arange(n, dtype=float), np.arange(s, dtype=float), indexing="ij")
    return np.column_stack([t.reshape(-1), x.reshape(-1)])


def sampling_terms(grid: SpatioTemporalGrid, params: ParameterSet, cfg: STLMConfig,
                   prefix: str = "stlm") -> tuple[Tensor, Tensor]:
    """Per-query sampling offsets (Q, L, K, 2) and normalised weights (Q, L, K)."""
    n, s, c3 = grid.values.shape
    L, K = cfg.heads, cfg.samples
    x = reshape(grid.values, (n * s, c3))
    a = f"{prefix}.attn"
    offsets = reshape(linear(x, *_p(params, a, "offset")), (n * s, L, K, 2))
    scores = reshape(linear(x, *_p(params, a, "score")), (n * s, L, K))
    return offsets, softmax(scores, axis=-1)


def deformable_attend(grid: SpatioTemporalGrid, params: ParameterSet, cfg: STLMConfig,
                      prefix: str = "stlm") -> SpatioTemporalGrid:
    n, s, c3 = grid.values.shape
    L, K = cfg.heads, cfg.samples
    d = c3 // L
    q = n * s
    values = grid.values
    if cfg.variant == "pos_embed":
        values = values + positional_embedding(n, s, c3)
    if cfg.variant == "dense":
        return SpatioTemporalGrid(_dense_attend(values, params, cfg, prefix), grid.frame_ages)

    src = SpatioTemporalGrid(values, grid.frame_ages)
    offsets, weights = sampling_terms(src, params, cfg, prefix)
    a = f"{prefix}.attn"
    proj = reshape(linear(reshape(values, (q, c3)), *_p(params, a, "value")), (n, s, c3))
    ref = np.repeat(reference_points(n, s), K, axis=0)  # (q*K, 2)
    heads = []
    for l in range(L):
        head_map = take(proj, (slice(None), slice(None), slice(l * d, (l + 1) * d)))
        locs = reshape(take(offsets, (slice(None), l)), (q * K, 2)) + ref
        sampled = reshape(bilinear_sample(head_map, locs), (q, K, d))
        heads.append(einsum2("qk,qkd->qd", take(weights, (slice(None), l)), sampled))
    merged = concat(heads, axis=1)
    out = linear(merged, *_p(params, a, "out"))
    return SpatioTemporalGrid(reshape(out, (n, s, c3)), grid.frame_ages)


def _dense_attend(values: Tensor, params: ParameterSet, cfg: STLMConfig, prefix: str) -> Tensor:
    n, s, c3 = values.shape
    L = cfg.heads
    d = c3 // L
    a = f"{prefix}.attn"
    x = reshape(values, (n * s, c3))
    qv = linear(x, *_p(params, a, "query"))
    kv = linear(x, *_p(params, a, "key"))
    vv = linear(x, *_p(params, a, "value"))
    heads = []
    for l in range(L):
        cols = (slice(None), slice(l * d, (l + 1) * d))
        scores = matmul(take(qv, cols), transpose(take(kv, cols))) * (1.0 / math.sqrt(d))
        heads.append(matmul(softmax(scores, axis=-1), take(vv, cols)))
    out = linear(concat(heads, axis=1), *_p(params, a, "out"))
    return reshape(out, (n, s, c3))


def fuse_current(attended: SpatioTemporalGrid, current: FeatureMap, params: ParameterSet,
                 R: int, prefix: str = "stlm") -> FeatureMap:
    """Fold the current-frame token row back to full resolution and fuse with F_t."""
    n, s, c3 = attended.values.shape
    rows, cols, _ = current.values.shape
    if s != R * R or rows % R or cols % R:
        raise DimensionError(f"cannot map {s} tokens with R={R} onto a {rows}x{cols} map")
    row = take(attended.values, n - 1)
    lifted = linear(row, *_p(params, prefix, "lift"))
    block = reshape(lifted, (R, R, lifted.shape[1]))
    up = upsample_nearest(block, rows // R, cols // R)
    stacked = concat([up, current.values], axis=2)
    fused = conv2d(stacked, *_p(params, prefix, "fuse"), padding=1)
    return FeatureMap(fused, current.grid, current.frame_age)


def stlm_forward(features: Sequence[FeatureMap], boxes: Sequence[Box3D], params: ParameterSet,
                 cfg: STLMConfig, prefix: str = "stlm") -> FeatureMap:
    """Fuse N frame features (oldest first) given boxes for the N-1 past frames."""
    if len(features) < 1 or len(boxes) != len(features) - 1:
        raise DimensionError(f"{len(features)} feature maps need {len(features) - 1} past boxes, got {len(boxes)}")
    grid = features[-1].grid
    tokens = []
    for feat, box in zip(features[:-1], boxes):
        mask = rasterize_box_mask(box, grid)
        fused = mask_fusion(feat, mask, params, cfg.variant, prefix)
        tokens.append(patchify(fused, params, cfg.patch_r, cfg.variant, prefix))
    tokens.append(patchify(features[-1], params, cfg.patch_r, cfg.variant, prefix))
    g = build_grid(tokens, [f.frame_age for f in features])
    attended = deformable_attend(g, params, cfg, prefix)
    return fuse_current(attended, features[-1], params, cfg.patch_r, prefix)
