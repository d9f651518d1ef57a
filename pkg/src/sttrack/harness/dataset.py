"""On-disk sequence layout.

    <root>/<sequence>/velodyne/000000.bin   float32 x, y, z, reserved
    <root>/<sequence>/gt.txt                one box line per frame
    <root>/<sequence>/category.txt          category name (optional, default "object")

Tracker results live in ``<results>/<sequence>.txt`` in the box line format.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ContractError
from ..geometry import Box3D, read_boxes, write_boxes
from ..pillars import load_bin, save_bin

DEFAULT_CATEGORY = "object"


@dataclass
class SequenceData:
    name: str
    clouds: list[np.ndarray]
    gt: list[Box3D]
    category: str = DEFAULT_CATEGORY


def write_sequence(root: str | Path, seq: SequenceData) -> Path:
    base = Path(root) / seq.name
    velo = base / "velodyne"
    velo.mkdir(parents=True, exist_ok=True)
    for k, cloud in enumerate(seq.clouds):
        save_bin(velo / f"{k:06d}.bin", cloud)
    write_boxes(base / "gt.txt", seq.gt)
    (base / "category.txt").write_text(seq.category + "\n")
    return base


def list_sequences(root: str | Path) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise ContractError(f"{root}: not a directory")
    names = sorted(p.name for p in root.iterdir() if (p / "gt.txt").is_file())
    if not names:
        raise ContractError(f"{root}: no sequences (expected <name>/gt.txt)")
    return names


def read_category(base: Path) -> str:
    path = base / "category.txt"
    return path.read_text().strip() or DEFAULT_CATEGORY if path.is_file() else DEFAULT_CATEGORY


def load_sequence(root: str | Path, name: str, with_clouds: bool = True) -> SequenceData:
    base = Path(root) / name
    gt = read_boxes(base / "gt.txt")
    clouds: list[np.ndarray] = []
    if with_clouds:
        files = sorted((base / "velodyne").glob("*.bin"))
        if len(files) != len(gt):
            raise ContractError(f"{base}: {len(files)} point clouds for {len(gt)} ground-truth boxes")
        clouds = [load_bin(f) for f in files]
    return SequenceData(name, clouds, gt, read_category(base))
