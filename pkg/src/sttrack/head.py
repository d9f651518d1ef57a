"""Center-based prediction head: targets, loss and peak decoding."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .geometry import Box3D, GridConfig, rasterize_box_mask, wrap_angle
from .numerics import ParameterSet, Tensor, absolute, clamp, conv2d, log, power, relu, sigmoid, total
from .pillars import FeatureMap

log_ = logging.getLogger(__name__)

BRANCHES = {"heatmap": 1, "offset": 2, "height": 1, "orientation": 2}
CLAMP_EPS = 1e-4


@dataclass(frozen=True)
class LossWeights:
    offset: float = 1.0
    height: float = 1.0
    orientation: float = 1.0
    focal_alpha: float = 2.0
    focal_beta: float = 4.0


@dataclass
class TargetMaps:
    heatmap: np.ndarray  # (H, W)
    offset: np.ndarray  # (H, W, 2): o_x, o_y
    height: np.ndarray  # (H, W, 1)
    orientation: np.ndarray  # (H, W, 2): sin, cos
    valid_mask: np.ndarray  # (H, W)
    outside: bool = False

    @property
    def positives(self) -> int:
        return int(self.valid_mask.sum())


@dataclass
class HeadOutput:
    heatmap: Tensor
    offset: Tensor
    height: Tensor
    orientation: Tensor


@dataclass
class Prediction:
    box: Box3D
    score: float
    peak_index: tuple[int, int]
    coasted: bool = False
    extras: dict = field(default_factory=dict)


def assign_targets(gt: Box3D, grid: GridConfig, gaussian_sigma: float | None = None) -> TargetMaps:
    """Training targets for one box.

    By default every cell whose center lies in the box footprint is positive.
    With ``gaussian_sigma`` (in cells) the heatmap is a Gaussian around the
    center cell and only that cell carries regression targets.
    """
    H, W = grid.H, grid.W
    cx = (gt.x - grid.x_min) / grid.cell_x
    cy = (gt.y - grid.y_min) / grid.cell_y
    jj, ii = np.meshgrid(np.arange(W), np.arange(H))

    if gaussian_sigma is None:
        heat = rasterize_box_mask(gt, grid)
        valid = heat.copy()
    else:
        ci, cj = int(math.floor(cy)), int(math.floor(cx))
        valid = np.zeros((H, W))
        heat = np.zeros((H, W))
        if 0 <= ci < H and 0 <= cj < W:
            heat = np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * gaussian_sigma ** 2))
            valid[ci, cj] = 1.0

    offset = np.zeros((H, W, 2))
    offset[..., 0] = (cx - jj) * valid
    offset[..., 1] = (cy - ii) * valid
    height = gt.z * valid[..., None]
    orient = np.zeros((H, W, 2))
    orient[..., 0] = math.sin(gt.theta) * valid
    orient[..., 1] = math.cos(gt.theta) * valid
    outside = valid.sum() == 0
    if outside:
        log_.warning("target box at (%.3f, %.3f) has no cell inside the grid", gt.x, gt.y)
    return TargetMaps(heat, offset, height, orient, valid, outside)


def decode(heatmap, offset, height, orientation, grid: GridConfig,
           known_size: tuple[float, float, float]) -> Prediction:
    """Box at the heatmap peak; ties go to the smallest row-major index."""
    heat = _arr(heatmap)
    if heat.ndim == 3:
        heat = heat[..., 0]
    off, hgt, ori = _arr(offset), _arr(height), _arr(orientation)
    i, j = np.unravel_index(int(np.argmax(heat)), heat.shape)
    x = (j + off[i, j, 0]) * grid.b * grid.v_x + grid.x_min
    y = (i + off[i, j, 1]) * grid.b * grid.v_y + grid.y_min
    z = float(hgt[i, j].reshape(-1)[0])
    theta = wrap_angle(math.atan2(ori[i, j, 0], ori[i, j, 1]))
    w, l, h = known_size
    return Prediction(Box3D(float(x), float(y), z, w, l, h, theta), float(heat[i, j]), (int(i), int(j)))


def _arr(v) -> np.ndarray:
    return v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)


def init_head_params(params: ParameterSet, c1: int, hidden: int, prefix: str = "head") -> None:
    for name, out in BRANCHES.items():
        params.uniform(f"{prefix}.{name}.conv.weight", (3, 3, c1, hidden), 9 * c1)
        params.uniform(f"{prefix}.{name}.conv.bias", (hidden,), 9 * c1)
        params.uniform(f"{prefix}.{name}.out.weight", (1, 1, hidden, out), hidden)
        params.uniform(f"{prefix}.{name}.out.bias", (out,), hidden)


def head_forward(U: FeatureMap, params: ParameterSet, prefix: str = "head") -> HeadOutput:
    outs = {}
    for name in BRANCHES:
        p = f"{prefix}.{name}"
        h = relu(conv2d(U.values, params[f"{p}.conv.weight"], params[f"{p}.conv.bias"], padding=1))
        outs[name] = conv2d(h, params[f"{p}.out.weight"], params[f"{p}.out.bias"])
    outs["heatmap"] = sigmoid(outs["heatmap"])
    return HeadOutput(**outs)


def focal_loss(pred: Tensor, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Penalty-reduced focal loss normalised by the number of positive cells."""
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    p = clamp(pred, CLAMP_EPS, 1.0 - CLAMP_EPS)
    pos = (target == 1.0).astype(np.float64)
    neg = 1.0 - pos
    one_minus = 1.0 - p
    pos_term = _power(one_minus, alpha) * log(p) * pos
    neg_term = _power(p, alpha) * log(one_minus) * (neg * (1.0 - target) ** beta)
    n_pos = max(pos.sum(), 1.0)
    return -(total(pos_term) + total(neg_term)) / n_pos


def _power(x: Tensor, k: float) -> Tensor:
    return x * x if k == 2.0 else power(x, k)


def masked_l1(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    channels = pred.shape[2]
    m = np.repeat(np.asarray(mask, dtype=np.float64)[:, :, None], channels, axis=2)
    n = mask.sum()
    if n == 0:
        return total(pred * 0.0)
    return total(absolute(pred - target) * m) / float(n)


def compute_loss(pred: HeadOutput, targets: TargetMaps,
                 weights: LossWeights = LossWeights()) -> tuple[Tensor, dict[str, float]]:
    if pred.heatmap.shape[:2] != targets.heatmap.shape:
        raise DimensionError(f"prediction {pred.heatmap.shape} vs target {targets.heatmap.shape}")
    parts = {
        "heatmap": focal_loss(pred.heatmap, targets.heatmap, weights.focal_alpha, weights.focal_beta),
        "offset": masked_l1(pred.offset, targets.offset, targets.valid_mask),
        "height": masked_l1(pred.height, targets.height, targets.valid_mask),
        "orientation": masked_l1(pred.orientation, targets.orientation, targets.valid_mask),
    }
    loss = (parts["heatmap"] + parts["offset"] * weights.offset + parts["height"] * weights.height
            + parts["orientation"] * weights.orientation)
    return loss, {k: v.item() for k, v in parts.items()}


# -- inspection dumps ---------------------------------------------------------

def write_heatmap_pgm(path: str | Path, heatmap: np.ndarray, maxval: int = 255) -> None:
    """ASCII P2 image; values are scaled from [0, 1] to [0, maxval]."""
    heat = np.clip(np.asarray(heatmap, dtype=np.float64), 0.0, 1.0)
    px = np.rint(heat * maxval).astype(int)
    rows = [" ".join(str(v) for v in r) for r in px]
    Path(path).write_text(f"P2\n{px.shape[1]} {px.shape[0]}\n{maxval}\n" + "\n".join(rows) + "\n")


def read_heatmap_pgm(path: str | Path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:4 + w * h], dtype=float).reshape(h, w) / maxval


def write_heatmap_csv(path: str | Path, heatmap: np.ndarray) -> None:
    heat = np.asarray(heatmap, dtype=np.float64)
    Path(path).write_text("".join(",".join(repr(float(v)) for v in r) + "\n" for r in heat))
