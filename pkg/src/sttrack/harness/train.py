"""Toy training loop: SGD with momentum on synthetic sequences."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import NumericError
from ..geometry import Box3D
from ..head import TargetMaps, assign_targets, compute_loss
from ..model import ModelConfig, build_params, forward, local_frames
from ..numerics import ParameterSet, Tensor
from .config import RunConfig
from .synth import SceneSpec, generate_sequence

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    params: ParameterSet
    losses: list[float] = field(default_factory=list)
    components: list[dict[str, float]] = field(default_factory=list)


@dataclass
class Sample:
    clouds: list
    ages: tuple[int, ...]
    past_boxes: list[Box3D]
    targets: TargetMaps


def make_sample(clouds: list[np.ndarray], gt: list[Box3D], k: int, model: ModelConfig,
                jitter: np.ndarray) -> Sample:
    """Training sample for frame ``k`` with ground-truth history boxes.

    The search region is centred on the previous ground-truth box shifted by
    ``jitter`` (x, y) so the network cannot rely on the target sitting at a
    fixed offset from the crop centre.
    """
    pattern = model.pattern
    prev = gt[max(k - 1, 0)]
    ref = prev.translated(float(jitter[0]), float(jitter[1]), 0.0)
    by_age = {a: clouds[max(k - a, 0)] for a in pattern.offsets}
    past = [gt[max(k - a, 0)] for a in pattern.oldest_first if a > 0]
    local_past = [b.translated(-ref.x, -ref.y, -ref.z) for b in past]
    target = gt[k].translated(-ref.x, -ref.y, -ref.z)
    return Sample(
        clouds=local_frames(by_age, ref, pattern),
        ages=pattern.oldest_first,
        past_boxes=local_past,
        targets=assign_targets(target, model.grid, model.gaussian_sigma),
    )


def training_sequences(spec: SceneSpec, count: int) -> list[tuple[list[np.ndarray], list[Box3D]]]:
    return [generate_sequence(replace(spec, seed=spec.seed + 1000 * i)) for i in range(count)]


def sample_loss(cfg: RunConfig, params: ParameterSet, sample: Sample) -> tuple[Tensor, dict[str, float]]:
    out = forward(cfg.model, params, sample.clouds, sample.ages, sample.past_boxes)
    return compute_loss(out, sample.targets, cfg.loss)


def train_toy(cfg: RunConfig, spec: SceneSpec, params: ParameterSet | None = None,
              progress: bool = False) -> TrainResult:
    """Fit the network on sequences drawn from ``spec``; deterministic given seeds."""
    tc = cfg.train
    params = build_params(cfg.model, cfg.param_seed) if params is None else params
    result = TrainResult(params)
    if tc.steps <= 0:
        return result

    data = training_sequences(spec, tc.sequences)
    rng = np.random.default_rng(tc.seed)
    velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    for step in range(tc.steps):
        params.zero_grad()
        total = 0.0
        parts: dict[str, float] = {}
        for _ in range(tc.batch):
            seq = int(rng.integers(len(data)))
            clouds, gt = data[seq]
            k = int(rng.integers(1, len(gt))) if len(gt) > 1 else 0
            jitter = rng.normal(0.0, tc.jitter, size=2) if tc.jitter > 0 else np.zeros(2)
            loss, comp = sample_loss(cfg, params, make_sample(clouds, gt, k, cfg.model, jitter))
            if not math.isfinite(loss.item()):
                raise NumericError(f"loss diverged at step {step}: {comp}")
            (loss / float(tc.batch)).backward()
            total += loss.item() / tc.batch
            for key, v in comp.items():
                parts[key] = parts.get(key, 0.0) + v / tc.batch

        grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in params.items()}
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not math.isfinite(norm):
            raise NumericError(f"gradient diverged at step {step}")
        scale = min(1.0, tc.clip / norm) if tc.clip > 0 and norm > 0 else 1.0
        for name, t in params.items():
            v = velocity[name]
            v *= tc.momentum
            v -= tc.lr * scale * grads[name]
            t.data = t.data + v
        result.losses.append(total)
        result.components.append(parts)
        if progress and (step % 25 == 0 or step == tc.steps - 1):
            log.info("step %4d loss %.4f %s", step, total,
                     " ".join(f"{k}={v:.3f}" for k, v in parts.items()))
    params.zero_grad()
    return result
