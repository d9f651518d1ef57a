"""Run-time self checks: gradient verification and golden output hashes."""

from __future__ import annotations

import hashlib
from dataclasses import replace
from typing import Callable

import numpy as np

from ..head import LossWeights, compute_loss, head_forward
from ..model import FramePattern, ModelConfig, build_params, forward
from ..numerics import (
    GradCheckReport,
    ParameterSet,
    Tensor,
    absolute,
    bilinear_sample,
    clamp,
    concat,
    conv2d,
    einsum2,
    finite_diff_check,
    linear,
    log,
    matmul,
    no_grad,
    power,
    relu,
    scatter_max,
    sigmoid,
    softmax,
    stack,
    take,
    transpose,
    upsample_nearest,
)
from ..pillars import FeatureMap, backbone, dynamic_pillarize, encode_frame
from ..stlm import VARIANTS, stlm_forward
from .synth import SceneSpec, generate_sequence
from .train import make_sample

# (input shapes, sampling range, builder) per differentiable op
OP_CASES: dict[str, tuple[dict[str, tuple[int, ...]], tuple[float, float], Callable]] = {
    "conv2d": ({"x": (5, 5, 2), "w": (3, 3, 2, 3), "b": (3,)}, (-1, 1),
               lambda p: conv2d(p["x"], p["w"], p["b"], stride=2, padding=1)),
    "linear": ({"x": (4, 3), "w": (3, 5), "b": (5,)}, (-1, 1), lambda p: linear(p["x"], p["w"], p["b"])),
    "matmul": ({"a": (3, 4), "b": (4, 2)}, (-1, 1), lambda p: matmul(p["a"], p["b"])),
    "einsum2": ({"a": (3, 4), "b": (3, 4, 2)}, (-1, 1), lambda p: einsum2("qk,qkd->qd", p["a"], p["b"])),
    "transpose": ({"a": (3, 4)}, (-1, 1), lambda p: transpose(p["a"])),
    "relu": ({"x": (4, 4)}, (-1, 1), lambda p: relu(p["x"])),
    "sigmoid": ({"x": (4, 4)}, (-3, 3), lambda p: sigmoid(p["x"])),
    "log": ({"x": (3, 3)}, (0.5, 2), lambda p: log(p["x"])),
    "power": ({"x": (3, 3)}, (0.5, 2), lambda p: power(p["x"], 2.5)),
    "abs": ({"x": (4, 4)}, (-1, 1), lambda p: absolute(p["x"])),
    "clamp": ({"x": (4, 4)}, (-1, 1), lambda p: clamp(p["x"], -0.5, 0.5)),
    "softmax": ({"x": (3, 5)}, (-2, 2), lambda p: softmax(p["x"], axis=1)),
    "bilinear_sample": ({"g": (4, 5, 3), "loc": (7, 2)}, (-1, 1),
                        lambda p: bilinear_sample(p["g"], p["loc"] * 2.0 + 1.5)),
    "scatter_max": ({"v": (6, 3)}, (-1, 1), lambda p: scatter_max(p["v"], np.array([0, 2, 0, 1, 2, 2]), 4)),
    "upsample_nearest": ({"x": (2, 3, 2)}, (-1, 1), lambda p: upsample_nearest(p["x"], 2, 3)),
    "concat": ({"a": (2, 3), "b": (2, 2)}, (-1, 1), lambda p: concat([p["a"], p["b"]], axis=1)),
    "stack": ({"a": (2, 3), "b": (2, 3)}, (-1, 1), lambda p: stack([p["a"], p["b"]], axis=0)),
    "take": ({"a": (4, 3)}, (-1, 1), lambda p: take(p["a"], np.array([0, 0, 3]))),
    "arith": ({"a": (3, 3), "b": (3, 3)}, (-1, 1), lambda p: p["a"] * p["b"] + p["a"] - 2.0 * p["b"]),
}


def op_gradcheck(name: str, seed: int = 0, epsilon: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    shapes, (lo, hi), build = OP_CASES[name]
    rng = np.random.default_rng(seed)
    params = ParameterSet(seed)
    for key, shape in shapes.items():
        params.add(key, rng.uniform(lo, hi, size=shape))
    out_shape = build(params).shape
    proj = rng.uniform(-1, 1, size=out_shape)
    return finite_diff_check(lambda p: (build(p) * proj).sum(), params, epsilon, tolerance)


def model_sample(model: ModelConfig, seed: int = 0, frame: int | None = None):
    spec = SceneSpec(frames=max(model.pattern.depth + 2, 8), seed=seed)
    clouds, gt = generate_sequence(spec)
    k = len(gt) - 1 if frame is None else frame
    return make_sample(clouds, gt, k, model, np.array([0.1, -0.05]))


KINK_RETRY_EPSILON = 1e-7


def model_gradcheck(model: ModelConfig, seed: int = 0, max_entries: int | None = 4,
                    epsilon: float = 1e-5, tolerance: float = 1e-4,
                    retry_epsilon: float | None = KINK_RETRY_EPSILON) -> GradCheckReport:
    """Composed pillars + backbone + STLM + head + loss on one synthetic sample."""
    params = build_params(model, seed)
    sample = model_sample(model, seed)

    def objective(p: ParameterSet) -> Tensor:
        out = forward(model, p, sample.clouds, sample.ages, sample.past_boxes)
        return compute_loss(out, sample.targets, LossWeights())[0]

    return finite_diff_check(objective, params, epsilon, tolerance, max_entries=max_entries, seed=seed,
                             retry_epsilon=retry_epsilon)


def all_gradchecks(model: ModelConfig | None = None, seed: int = 0,
                   max_entries: int | None = 4) -> dict[str, GradCheckReport]:
    model = ModelConfig() if model is None else model
    reports = {f"op.{name}": op_gradcheck(name, seed) for name in OP_CASES}
    reports["model"] = model_gradcheck(model, seed, max_entries)
    return reports


# -- golden hashes ------------------------------------------------------------

GOLDEN_PATTERNS = ("0,1", "0,2", "0,1,2", "0,1,2,3", "0,1,3,5", "0,2,3,4", "0,2,4,6", "0,1,2,3,4", "0,1,2,3,4,5")
GOLDEN_DIGITS = 9


def array_hash(arr: np.ndarray) -> str:
    """SHA-256 of values rounded to GOLDEN_DIGITS decimals (absorbs BLAS summation order)."""
    rounded = np.round(np.asarray(arr, dtype=np.float64), GOLDEN_DIGITS) + 0.0  # folds -0.0
    return hashlib.sha256(np.ascontiguousarray(rounded).tobytes()).hexdigest()


def _golden_arrays(seed: int = 0) -> dict[str, Callable[[], np.ndarray]]:
    base = ModelConfig()
    cases: dict[str, Callable[[], np.ndarray]] = {}

    def encoded(model: ModelConfig):
        params = build_params(model, seed)
        sample = model_sample(model, seed)
        return params, sample

    def backbone_case():
        params, sample = encoded(base)
        pg = dynamic_pillarize(sample.clouds[-1], base.grid, params)
        return backbone(pg, base.grid, params).values.data

    def head_case():
        params = build_params(base, seed)
        rng = np.random.default_rng(seed)
        U = FeatureMap(Tensor(rng.normal(size=(base.grid.H, base.grid.W, base.c1))), base.grid, 0.0)
        out = head_forward(U, params)
        return np.concatenate([out.heatmap.data, out.offset.data, out.height.data, out.orientation.data], axis=2)

    cases["backbone"] = backbone_case
    cases["head"] = head_case
    for variant in VARIANTS:
        model = replace(base, stlm=replace(base.stlm, variant=variant))

        def stlm_case(model=model):
            params, sample = encoded(model)
            feats = [encode_frame(c, model.grid, params, a) for c, a in zip(sample.clouds, sample.ages)]
            return stlm_forward(feats, sample.past_boxes, params, model.stlm).values.data

        cases[f"stlm.{variant}"] = stlm_case
    for text in GOLDEN_PATTERNS:
        model = replace(base, pattern=FramePattern.parse(text))

        def pattern_case(model=model):
            # an untrained current-row query only reaches the adjacent row, so
            # the heatmap alone cannot tell patterns apart; hash the inputs too
            params, sample = encoded(model)
            feats = [encode_frame(c, model.grid, params, a) for c, a in zip(sample.clouds, sample.ages)]
            U = stlm_forward(feats, sample.past_boxes, params, model.stlm)
            parts = [f.values.data.ravel() for f in feats] + [head_forward(U, params).heatmap.data.ravel()]
            return np.concatenate(parts)

        cases[f"pattern.{text.replace(',', '_')}"] = pattern_case
    return cases


def golden_hashes(seed: int = 0) -> dict[str, str]:
    with no_grad():
        return {name: array_hash(fn()) for name, fn in _golden_arrays(seed).items()}


__all__ = [
    "GOLDEN_PATTERNS",
    "OP_CASES",
    "all_gradchecks",
    "array_hash",
    "golden_hashes",
    "model_gradcheck",
    "model_sample",
    "op_gradcheck",
]
