"""Time-stamped point clouds, dynamic pillar encoding and the BEV backbone."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError
from .geometry import GridConfig
from .numerics import ParameterSet, Tensor, conv2d, linear, relu, reshape, scatter_max

POINT_FEATURES = 6  # x, y, z, t, dx, dy


@dataclass(frozen=True)
class TimedPointCloud:
    """Points as a (P, 4) array of x, y, z, t; t is constant per frame."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(pts)):
            raise ContractError("point coordinates must be finite")
        if pts.shape[0] and np.ptp(pts[:, 3]) != 0:
            raise ContractError("time channel must be constant within a frame")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def age(self) -> float | None:
        return float(self.points[0, 3]) if len(self) else None


@dataclass
class FeatureMap:
    values: Tensor  # rows (H) x cols (W) x C
    grid: GridConfig
    frame_age: float = 0.0

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def stamp_time(points: np.ndarray, age: float) -> TimedPointCloud:
    if age < 0:
        raise ContractError("frame age must be non-negative")
    pts = np.asarray(points, dtype=np.float64)
    xyz = pts.reshape(0, 3) if pts.size == 0 else pts[:, :3]
    t = np.full((xyz.shape[0], 1), float(age))
    return TimedPointCloud(np.hstack([xyz, t]))


def load_bin(path: str | Path) -> np.ndarray:
    """Read a float32 x, y, z, reserved dump; returns (P, 3) float64."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4:
        raise ContractError(f"{path}: size is not a multiple of 4 floats")
    return raw.reshape(-1, 4)[:, :3].astype(np.float64)


def save_bin(path: str | Path, xyz: np.ndarray) -> None:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    out = np.zeros((xyz.shape[0], 4), dtype="<f4")
    out[:, :3] = xyz
    out.tofile(path)


def crop_mask(points: np.ndarray, grid: GridConfig) -> np.ndarray:
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    return ((x >= grid.x_min) & (x < grid.x_max) & (y >= grid.y_min) & (y < grid.y_max)
            & (z >= grid.z_min) & (z <= grid.z_max))


def init_pillar_params(params: ParameterSet, cp: int, prefix: str = "pillars") -> None:
    params.uniform(f"{prefix}.mlp1.weight", (POINT_FEATURES, cp), POINT_FEATURES)
    params.uniform(f"{prefix}.mlp1.bias", (cp,), POINT_FEATURES)
    params.uniform(f"{prefix}.mlp2.weight", (cp, cp), cp)
    params.uniform(f"{prefix}.mlp2.bias", (cp,), cp)


def point_features(cloud: TimedPointCloud, grid: GridConfig) -> tuple[np.ndarray, np.ndarray]:
    """Augmented per-point features and flat pillar index of in-range points."""
    pts = cloud.points
    pts = pts[crop_mask(pts, grid)]
    ix = np.floor((pts[:, 0] - grid.x_min) / grid.v_x).astype(np.int64)
    iy = np.floor((pts[:, 1] - grid.y_min) / grid.v_y).astype(np.int64)
    cols = grid.W * grid.b
    # float rounding at the upper edge can land one past the last pillar
    ix = np.minimum(ix, cols - 1)
    iy = np.minimum(iy, grid.H * grid.b - 1)
    dx = pts[:, 0] - (grid.x_min + (ix + 0.5) * grid.v_x)
    dy = pts[:, 1] - (grid.y_min + (iy + 0.5) * grid.v_y)
    feats = np.column_stack([pts[:, :4], dx, dy])
    return feats, iy * cols + ix


def pillar_mlp(feats: Tensor, params: ParameterSet, prefix: str = "pillars") -> Tensor:
    h = relu(linear(feats, params[f"{prefix}.mlp1.weight"], params[f"{prefix}.mlp1.bias"]))
    return relu(linear(h, params[f"{prefix}.mlp2.weight"], params[f"{prefix}.mlp2.bias"]))


def dynamic_pillarize(cloud: TimedPointCloud, grid: GridConfig, params: ParameterSet,
                      prefix: str = "pillars") -> Tensor:
    """Scatter-max of per-point MLP features into a (H*b, W*b, Cp) grid."""
    rows, cols = grid.pillar_shape
    cp = params[f"{prefix}.mlp2.bias"].shape[0]
    feats, index = point_features(cloud, grid)
    encoded = pillar_mlp(Tensor(feats.reshape(-1, POINT_FEATURES)), params, prefix)
    pooled = scatter_max(encoded, index, rows * cols)
    return reshape(pooled, (rows, cols, cp))


def downsample_steps(b: int) -> int:
    steps = int(round(math.log2(b))) if b >= 1 else -1
    if steps < 0 or 2 ** steps != b:
        raise ConfigurationError(f"downsample stride b={b} must be a power of two")
    return steps


def init_backbone_params(params: ParameterSet, cp: int, c1: int, b: int, prefix: str = "backbone") -> None:
    cin = cp
    for n in range(downsample_steps(b) + 2):
        params.uniform(f"{prefix}.conv{n}.weight", (3, 3, cin, c1), 9 * cin)
        params.uniform(f"{prefix}.conv{n}.bias", (c1,), 9 * cin)
        cin = c1


def backbone(pillar_grid: Tensor, grid: GridConfig, params: ParameterSet, frame_age: float = 0.0,
             prefix: str = "backbone") -> FeatureMap:
    rows, cols = pillar_grid.shape[:2]
    if rows % grid.b or cols % grid.b:
        raise ConfigurationError(f"pillar grid {rows}x{cols} not divisible by b={grid.b}")
    steps = downsample_steps(grid.b)
    x = pillar_grid
    for n in range(steps + 2):
        stride = 2 if n < steps else 1
        x = relu(conv2d(x, params[f"{prefix}.conv{n}.weight"], params[f"{prefix}.conv{n}.bias"],
                        stride=stride, padding=1))
    return FeatureMap(x, grid, frame_age)


def encode_frame(cloud: TimedPointCloud, grid: GridConfig, params: ParameterSet, age: float) -> FeatureMap:
    return backbone(dynamic_pillarize(cloud, grid, params), grid, params, age)
