"""Oriented boxes, rotated-rectangle overlap and BEV rasterisation.

Box convention: ``l`` runs along the box-local x axis and ``w`` along the
box-local y axis before rotation by ``theta`` about +z. Grids index cells as
``[i, j]`` with ``i`` along y (rows) and ``j`` along x (columns).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, ContractError

AREA_EPS = 1e-12
INSIDE_EPS = 1e-9


def wrap_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    t = math.fmod(theta, 2 * math.pi)
    if t <= -math.pi:
        t += 2 * math.pi
    elif t > math.pi:
        t -= 2 * math.pi
    return t


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    w: float
    l: float  # noqa: E741
    h: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ContractError(f"box extents must be positive, got w={self.w} l={self.l} h={self.h}")
        vals = (self.x, self.y, self.z, self.w, self.l, self.h, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ContractError("box fields must be finite")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def size(self) -> tuple[float, float, float]:
        return (self.w, self.l, self.h)

    @property
    def volume(self) -> float:
        return self.w * self.l * self.h

    def translated(self, dx: float, dy: float, dz: float) -> Box3D:
        return Box3D(self.x + dx, self.y + dy, self.z + dz, self.w, self.l, self.h, self.theta)

    def with_center(self, x: float, y: float, z: float) -> Box3D:
        return Box3D(x, y, z, self.w, self.l, self.h, self.theta)

    def bev_corners(self) -> np.ndarray:
        """Counter-clockwise footprint corners, shape (4, 2)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        hl, hw = self.l / 2, self.w / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])

    def contains_bev(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Closed point-in-footprint test for arrays of points."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = xs - self.x, ys - self.y
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        return (np.abs(lx) <= self.l / 2 + INSIDE_EPS) & (np.abs(ly) <= self.w / 2 + INSIDE_EPS)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        inside = self.contains_bev(pts[:, 0], pts[:, 1])
        return inside & (np.abs(pts[:, 2] - self.z) <= self.h / 2 + INSIDE_EPS)


@dataclass(frozen=True)
class GridConfig:
    x_min: float = -4.8
    y_min: float = -4.8
    v_x: float = 0.15
    v_y: float = 0.15
    W: int = 16
    H: int = 16
    b: int = 4
    z_min: float = -2.0
    z_max: float = 2.0

    def __post_init__(self) -> None:
        if not (self.v_x > 0 and self.v_y > 0):
            raise ConfigurationError("voxel sizes must be positive")
        if self.W < 1 or self.H < 1 or self.b < 1:
            raise ConfigurationError("W, H and b must be >= 1")
        if not self.z_max > self.z_min:
            raise ConfigurationError("z_max must exceed z_min")

    @property
    def cell_x(self) -> float:
        """Pitch of one output cell along x."""
        return self.v_x * self.b

    @property
    def cell_y(self) -> float:
        return self.v_y * self.b

    @property
    def x_max(self) -> float:
        return self.x_min + self.W * self.b * self.v_x

    @property
    def y_max(self) -> float:
        return self.y_min + self.H * self.b * self.v_y

    @property
    def pillar_shape(self) -> tuple[int, int]:
        """(rows, cols) of the pillar grid before downsampling."""
        return (self.H * self.b, self.W * self.b)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World (x, y) of every output cell center, each shaped (H, W)."""
        j = np.arange(self.W)
        i = np.arange(self.H)
        xs = self.x_min + (j + 0.5) * self.cell_x
        ys = self.y_min + (i + 0.5) * self.cell_y
        return np.meshgrid(xs, ys)

    @classmethod
    def centered(cls, extent: float = 9.6, pillar: float = 0.15, b: int = 4,
                 z_min: float = -2.0, z_max: float = 2.0) -> GridConfig:
        n = extent / (pillar * b)
        cells = int(round(n))
        if abs(n - cells) > 1e-9:
            raise ConfigurationError(f"extent {extent} not a multiple of cell pitch {pillar * b}")
        half = extent / 2
        return cls(-half, -half, pillar, pillar, cells, cells, b, z_min, z_max)


def rasterize_box_mask(box: Box3D, grid: GridConfig) -> np.ndarray:
    """Binary (H, W) mask of cells whose center lies inside the box footprint."""
    xs, ys = grid.cell_centers()
    return box.contains_bev(xs, ys).astype(np.float64)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` against convex CCW ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for k in range(n):
        if not out:
            break
        ax, ay = clipper[k]
        bx, by = clipper[(k + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        src, out = out, []
        prev = src[-1]
        sp = side(prev)
        for cur in src:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_cross_point(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_cross_point(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection(a: Box3D, b: Box3D) -> float:
    area = abs(polygon_area(clip_polygon(a.bev_corners(), b.bev_corners())))
    return 0.0 if area < AREA_EPS else area


def bev_iou(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection(a, b)
    union = a.w * a.l + b.w * b.l - inter
    return float(min(max(inter / union, 0.0), 1.0))


def iou3d(a: Box3D, b: Box3D) -> float:
    inter_area = bev_intersection(a, b)
    top = min(a.z + a.h / 2, b.z + b.h / 2)
    bottom = max(a.z - a.h / 2, b.z - b.h / 2)
    inter = inter_area * max(top - bottom, 0.0)
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0))


def center_distance(a: Box3D, b: Box3D) -> float:
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


def bev_center_distance(a: Box3D, b: Box3D) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def to_local(points: np.ndarray, reference: Box3D) -> np.ndarray:
    """Translate (P, 3+) points so the reference center becomes the origin.

    No rotation is applied; extra columns (time) pass through unchanged.
    """
    pts = np.array(points, dtype=np.float64, copy=True)
    if pts.size:
        pts[:, :3] -= reference.center
    return pts


# -- box text format -----------------------------------------------------

def format_box_line(frame: int, box: Box3D) -> str:
    vals = (box.x, box.y, box.z, box.w, box.l, box.h, box.theta)
    return f"{frame} " + " ".join(repr(float(v)) for v in vals)


def write_boxes(path: str | Path, boxes: Iterable[Box3D], start: int = 0) -> None:
    lines = [format_box_line(start + k, b) for k, b in enumerate(boxes)]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_boxes(path: str | Path) -> list[Box3D]:
    """Parse ``frame x y z w l h theta`` lines, ordered by frame index."""
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ContractError(f"{path}:{n}: expected 8 fields, got {len(parts)}")
        rows.append((int(parts[0]), Box3D(*map(float, parts[1:]))))
    rows.sort(key=lambda r: r[0])
    frames = [r[0] for r in rows]
    if frames != list(range(frames[0], frames[0] + len(frames))) if frames else False:
        raise ContractError(f"{path}: frame indices are not contiguous")
    return [r[1] for r in rows]
