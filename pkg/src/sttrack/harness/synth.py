"""Synthetic LiDAR-like sequences with a moving target box."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..geometry import Box3D

MOTIONS = ("static", "constant_velocity", "constant_turn")


@dataclass(frozen=True)
class SceneSpec:
    motion: str = "constant_velocity"
    speed: float = 0.2  # m / frame
    yaw_rate: float = 0.0  # rad / frame
    target_points: int = 200
    clutter_points: int = 500
    distractors: int = 0
    noise_sigma: float = 0.02
    frames: int = 20
    seed: int = 0
    w: float = 1.8
    l: float = 4.2  # noqa: E741
    h: float = 1.6
    heading: float = 0.0
    start_spread: float = 2.0
    scene_size: float = 30.0
    clutter_height: float = 2.5

    def __post_init__(self) -> None:
        if self.motion not in MOTIONS:
            raise ConfigurationError(f"unknown motion model {self.motion!r}; expected one of {MOTIONS}")
        if self.target_points < 0 or self.clutter_points < 0 or self.distractors < 0:
            raise ConfigurationError("densities and distractor count must be non-negative")
        if self.frames < 1:
            raise ConfigurationError("a sequence needs at least one frame")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be non-negative")


def trajectory(start: Box3D, motion: str, speed: float, yaw_rate: float, frames: int) -> list[Box3D]:
    boxes = [start]
    x, y, th = start.x, start.y, start.theta
    for k in range(1, frames):
        if motion == "static":
            pass
        elif motion == "constant_velocity":
            x = start.x + k * speed * math.cos(start.theta)
            y = start.y + k * speed * math.sin(start.theta)
        else:
            th = start.theta + k * yaw_rate
            x += speed * math.cos(th)
            y += speed * math.sin(th)
        boxes.append(Box3D(x, y, start.z, start.w, start.l, start.h, th))
    return boxes


def sample_box_surface(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    """Points uniformly distributed over the six faces of an oriented box."""
    if n == 0:
        return np.zeros((0, 3))
    l, w, h = box.l, box.w, box.h
    faces = np.array([w * h, w * h, l * h, l * h, l * w, l * w])
    face = rng.choice(6, size=n, p=faces / faces.sum())
    u = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array([l, w, h])
    axis = face // 2
    sign = np.where(face % 2 == 0, 0.5, -0.5)
    ext = np.array([l, w, h])
    u[np.arange(n), axis] = sign * ext[axis]
    c, s = math.cos(box.theta), math.sin(box.theta)
    x = c * u[:, 0] - s * u[:, 1] + box.x
    y = s * u[:, 0] + c * u[:, 1] + box.y
    return np.column_stack([x, y, u[:, 2] + box.z])


def generate_sequence(spec: SceneSpec) -> tuple[list[np.ndarray], list[Box3D]]:
    """Point clouds (float32-representable, (P, 3)) and ground-truth boxes."""
    rng = np.random.default_rng(spec.seed)
    sx, sy = rng.uniform(-spec.start_spread, spec.start_spread, size=2)
    start = Box3D(float(sx), float(sy), spec.h / 2, spec.w, spec.l, spec.h, spec.heading)
    gt = trajectory(start, spec.motion, spec.speed, spec.yaw_rate, spec.frames)

    mid = np.mean([[b.x, b.y] for b in gt], axis=0)
    half = spec.scene_size / 2
    others = []
    for _ in range(spec.distractors):
        while True:
            dx, dy = rng.uniform(-half, half, size=2)
            cand = Box3D(float(mid[0] + dx), float(mid[1] + dy), spec.h / 2, spec.w, spec.l, spec.h,
                         float(rng.uniform(-math.pi, math.pi)))
            if math.hypot(cand.x - start.x, cand.y - start.y) > spec.l + spec.w:
                break
        others.append(trajectory(cand, spec.motion, spec.speed, spec.yaw_rate, spec.frames))

    clouds = []
    for k in range(spec.frames):
        parts = [sample_box_surface(gt[k], spec.target_points, rng)]
        for traj in others:
            parts.append(sample_box_surface(traj[k], spec.target_points, rng))
        clutter = np.column_stack([
            rng.uniform(mid[0] - half, mid[0] + half, spec.clutter_points),
            rng.uniform(mid[1] - half, mid[1] + half, spec.clutter_points),
            rng.uniform(0.0, spec.clutter_height, spec.clutter_points),
        ])
        parts.append(clutter)
        pts = np.vstack(parts)
        if spec.noise_sigma > 0:
            pts = pts + rng.normal(0.0, spec.noise_sigma, size=pts.shape)
        # round through float32 so a binary dump reloads bit-exactly
        clouds.append(pts.astype(np.float32).astype(np.float64))
    return clouds, gt


def subsample_sequence(clouds: list, gt_boxes: list, stride: int) -> tuple[list, list]:
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    return list(clouds[::stride]), list(gt_boxes[::stride])
