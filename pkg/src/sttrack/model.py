"""Whole-network assembly: pillars -> backbone -> STLM -> head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .geometry import Box3D, GridConfig, to_local
from .head import HeadOutput, head_forward, init_head_params
from .numerics import ParameterSet
from .pillars import TimedPointCloud, encode_frame, init_backbone_params, init_pillar_params, stamp_time
from .stlm import STLMConfig, init_stlm_params, stlm_forward


@dataclass(frozen=True)
class FramePattern:
    """Frame ages fed to the network; 0 is the current frame."""

    offsets: tuple[int, ...] = (0, 1, 2, 3)

    def __post_init__(self) -> None:
        offs = tuple(int(o) for o in self.offsets)
        if 0 not in offs:
            raise ConfigurationError(f"frame pattern {offs} must include the current frame 0")
        if any(o < 0 for o in offs) or len(set(offs)) != len(offs):
            raise ConfigurationError(f"frame pattern {offs} must hold distinct non-negative ages")
        object.__setattr__(self, "offsets", tuple(sorted(offs)))

    @classmethod
    def parse(cls, text: str) -> FramePattern:
        return cls(tuple(int(t) for t in text.replace(",", " ").split()))

    @property
    def past(self) -> tuple[int, ...]:
        return self.offsets[1:]

    @property
    def oldest_first(self) -> tuple[int, ...]:
        return tuple(sorted(self.offsets, reverse=True))

    @property
    def depth(self) -> int:
        return max(self.offsets)

    def __len__(self) -> int:
        return len(self.offsets)

    def __str__(self) -> str:
        return ",".join(str(o) for o in self.offsets)


@dataclass(frozen=True)
class ModelConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    pattern: FramePattern = field(default_factory=FramePattern)
    cp: int = 16
    c1: int = 32
    head_hidden: int = 32
    stlm: STLMConfig = field(default_factory=STLMConfig)
    gaussian_sigma: float | None = None

    def validate(self) -> None:
        self.stlm.validate(self.grid, self.c1)


def build_params(cfg: ModelConfig, seed: int = 0) -> ParameterSet:
    cfg.validate()
    params = ParameterSet(seed)
    init_pillar_params(params, cfg.cp)
    init_backbone_params(params, cfg.cp, cfg.c1, cfg.grid.b)
    init_stlm_params(params, cfg.stlm, cfg.grid, cfg.c1)
    init_head_params(params, cfg.c1, cfg.head_hidden)
    return params


def local_frames(clouds_by_age: dict[int, np.ndarray], reference: Box3D,
                 pattern: FramePattern) -> list[TimedPointCloud]:
    """Translate each frame into the reference-centred frame and stamp its age, oldest first."""
    return [stamp_time(to_local(np.asarray(clouds_by_age[a])[:, :3], reference), a)
            for a in pattern.oldest_first]


def forward(cfg: ModelConfig, params: ParameterSet, clouds: Sequence[TimedPointCloud],
            ages: Sequence[float], past_boxes: Sequence[Box3D]) -> HeadOutput:
    """Run the network on local-frame clouds (oldest first) and past boxes."""
    feats = [encode_frame(c, cfg.grid, params, a) for c, a in zip(clouds, ages)]
    U = stlm_forward(feats, past_boxes, params, cfg.stlm)
    return head_forward(U, params)
