"""Sliding-window single-object tracking loop."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .geometry import Box3D
from .head import Prediction, decode
from .model import FramePattern, ModelConfig, forward, local_frames
from .numerics import ParameterSet, no_grad
from .pillars import crop_mask


@dataclass(frozen=True)
class TrackState:
    """Recent history indexed by age relative to the last processed frame.

    ``frame_buffer[j]`` and ``box_history[j]`` hold frame ``k - j`` after
    frame ``k`` has been processed.
    """

    frame_buffer: tuple[np.ndarray, ...]
    box_history: tuple[Box3D, ...]
    pattern: FramePattern
    params: ParameterSet
    model: ModelConfig
    known_size: tuple[float, float, float]
    frames_seen: int = 1

    @property
    def reference(self) -> Box3D:
        return self.box_history[0]


@dataclass(frozen=True)
class LocalInputs:
    """Everything the predictor sees for one step, in the reference frame."""

    clouds: list  # TimedPointCloud per pattern age, oldest first
    ages: tuple[int, ...]
    past_boxes: list[Box3D]
    reference: Box3D
    frame_index: int


Predictor = Callable[[TrackState, LocalInputs], Prediction]


def init(first_cloud: np.ndarray, gt_box: Box3D, pattern: FramePattern, params: ParameterSet,
         model: ModelConfig) -> TrackState:
    """Start a track; buffers are back-filled with the first frame and box."""
    depth = max(pattern.depth, 1)
    cloud = np.asarray(first_cloud, dtype=np.float64)[:, :3]
    return TrackState(
        frame_buffer=(cloud,) * depth,
        box_history=(gt_box,) * depth,
        pattern=pattern,
        params=params,
        model=model,
        known_size=(gt_box.w, gt_box.l, gt_box.h),
    )


def network_predictor(state: TrackState, inputs: LocalInputs) -> Prediction:
    with no_grad():
        out = forward(state.model, state.params, inputs.clouds, inputs.ages, inputs.past_boxes)
    return decode(out.heatmap, out.offset, out.height, out.orientation, state.model.grid, state.known_size)


def gather_inputs(state: TrackState, new_cloud: np.ndarray) -> LocalInputs:
    ref = state.reference
    clouds_by_age = {0: np.asarray(new_cloud, dtype=np.float64)[:, :3]}
    for a in state.pattern.past:
        clouds_by_age[a] = state.frame_buffer[a - 1]
    past = [state.box_history[a - 1] for a in state.pattern.oldest_first if a > 0]
    local_boxes = [b.translated(-ref.x, -ref.y, -ref.z) for b in past]
    return LocalInputs(
        clouds=local_frames(clouds_by_age, ref, state.pattern),
        ages=state.pattern.oldest_first,
        past_boxes=local_boxes,
        reference=ref,
        frame_index=state.frames_seen,
    )


def step(state: TrackState, new_cloud: np.ndarray,
         predictor: Predictor = network_predictor) -> tuple[Prediction, TrackState]:
    inputs = gather_inputs(state, new_cloud)
    ref = inputs.reference
    current = inputs.clouds[-1].points
    if not crop_mask(current, state.model.grid).any():
        pred = Prediction(ref, 0.0, (-1, -1), coasted=True)
    else:
        local = predictor(state, inputs)
        world = local.box.translated(ref.x, ref.y, ref.z)
        pred = replace(local, box=world)
    cloud = np.asarray(new_cloud, dtype=np.float64)[:, :3]
    new_state = replace(
        state,
        frame_buffer=(cloud,) + state.frame_buffer[:-1],
        box_history=(pred.box,) + state.box_history[:-1],
        frames_seen=state.frames_seen + 1,
    )
    return pred, new_state


def run_sequence(clouds: Sequence[np.ndarray], gt_first: Box3D, params: ParameterSet,
                 model: ModelConfig, predictor: Predictor = network_predictor) -> list[Box3D]:
    """One-pass tracking: ground truth is used for frame 0 only."""
    if not clouds:
        raise ValueError("sequence has no frames")
    state = init(clouds[0], gt_first, model.pattern, params, model)
    boxes = [gt_first]
    for cloud in clouds[1:]:
        pred, state = step(state, cloud, predictor)
        boxes.append(pred.box)
    return boxes


def run_sequence_detailed(clouds: Sequence[np.ndarray], gt_first: Box3D, params: ParameterSet,
                          model: ModelConfig, predictor: Predictor = network_predictor) -> list[Prediction]:
    state = init(clouds[0], gt_first, model.pattern, params, model)
    preds = [Prediction(gt_first, 1.0, (-1, -1))]
    for cloud in clouds[1:]:
        pred, state = step(state, cloud, predictor)
        preds.append(pred)
    return preds


__all__ = [
    "LocalInputs",
    "TrackState",
    "gather_inputs",
    "init",
    "network_predictor",
    "run_sequence",
    "run_sequence_detailed",
    "step",
]
