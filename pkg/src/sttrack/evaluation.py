"""One-pass evaluation: Success, Precision and frame-weighted category means.

Both scores are areas under threshold curves sampled at 201 uniform
thresholds and integrated with the trapezoidal rule:

* Success: ``s(tau)`` is the fraction of frames with IoU >= tau (a frame with
  zero overlap never counts), tau in [0, 1].
* Precision: ``p(tau)`` is the fraction of frames with center error <= tau,
  tau in [0, 2] m, normalised by the 2 m range.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError
from .geometry import Box3D, bev_center_distance, bev_iou, center_distance, iou3d

N_THRESHOLDS = 201
MAX_DISTANCE = 2.0

IOU_THRESHOLDS = np.linspace(0.0, 1.0, N_THRESHOLDS)
DIST_THRESHOLDS = np.linspace(0.0, MAX_DISTANCE, N_THRESHOLDS)


@dataclass
class SequenceEval:
    ious: list[float]
    bev_ious: list[float]
    dists: list[float]
    bev_dists: list[float]

    @property
    def frame_count(self) -> int:
        return len(self.ious)


@dataclass
class CategoryReport:
    name: str
    frames: int
    success: float
    precision: float
    success_bev: float = float("nan")
    precision_bev: float = float("nan")


def success_curve(ious: Sequence[float], thresholds: np.ndarray = IOU_THRESHOLDS) -> np.ndarray:
    v = np.asarray(ious, dtype=np.float64)
    if v.size == 0:
        raise ContractError("success is undefined for an empty frame list")
    hit = (v[None, :] >= thresholds[:, None]) & (v[None, :] > 0)
    return hit.mean(axis=1)


def precision_curve(dists: Sequence[float], thresholds: np.ndarray = DIST_THRESHOLDS) -> np.ndarray:
    v = np.asarray(dists, dtype=np.float64)
    if v.size == 0:
        raise ContractError("precision is undefined for an empty frame list")
    return (v[None, :] <= thresholds[:, None]).mean(axis=1)


def _auc(curve: np.ndarray, thresholds: np.ndarray) -> float:
    y = curve
    dx = np.diff(thresholds)
    area = float(np.sum(dx * (y[1:] + y[:-1]) / 2.0))
    return area / float(thresholds[-1] - thresholds[0])


def success(ious: Sequence[float]) -> float:
    """Success score in percent."""
    return 100.0 * _auc(success_curve(ious), IOU_THRESHOLDS)


def precision(dists: Sequence[float]) -> float:
    """Precision score in percent."""
    return 100.0 * _auc(precision_curve(dists), DIST_THRESHOLDS)


def weighted_mean(reports: Sequence[CategoryReport], attr: str = "success") -> float:
    if not reports:
        raise ContractError("weighted mean of no categories")
    frames = np.array([r.frames for r in reports], dtype=np.float64)
    if np.any(frames <= 0):
        raise ContractError("every category needs a positive frame count")
    values = np.array([getattr(r, attr) for r in reports], dtype=np.float64)
    return float(np.sum(values * frames) / np.sum(frames))


def evaluate_sequence(predictions: Sequence[Box3D], ground_truths: Sequence[Box3D]) -> SequenceEval:
    """Per-frame scores; frame 0 is the given box and is skipped."""
    if len(predictions) != len(ground_truths):
        raise ContractError(f"{len(predictions)} predictions for {len(ground_truths)} ground-truth frames")
    pairs = list(zip(predictions, ground_truths))[1:]
    return SequenceEval(
        ious=[iou3d(p, g) for p, g in pairs],
        bev_ious=[bev_iou(p, g) for p, g in pairs],
        dists=[center_distance(p, g) for p, g in pairs],
        bev_dists=[bev_center_distance(p, g) for p, g in pairs],
    )


def pool(evals: Sequence[SequenceEval]) -> SequenceEval:
    return SequenceEval(
        ious=[v for e in evals for v in e.ious],
        bev_ious=[v for e in evals for v in e.bev_ious],
        dists=[v for e in evals for v in e.dists],
        bev_dists=[v for e in evals for v in e.bev_dists],
    )


def category_report(name: str, pooled: SequenceEval) -> CategoryReport:
    return CategoryReport(
        name=name,
        frames=pooled.frame_count,
        success=success(pooled.ious),
        precision=precision(pooled.dists),
        success_bev=success(pooled.bev_ious),
        precision_bev=precision(pooled.bev_dists),
    )


@dataclass
class EvaluationResult:
    categories: list[CategoryReport]
    mean: CategoryReport
    pooled: dict[str, SequenceEval]


def evaluate_sequences(predictions: Sequence[Sequence[Box3D]], ground_truths: Sequence[Sequence[Box3D]],
                       categories: Sequence[str]) -> EvaluationResult:
    if not (len(predictions) == len(ground_truths) == len(categories)):
        raise ContractError("predictions, ground truths and categories must align per sequence")
    evals = [evaluate_sequence(p, g) for p, g in zip(predictions, ground_truths)]
    return summarize(evals, categories)


def summarize(evals: Sequence[SequenceEval], categories: Sequence[str]) -> EvaluationResult:
    """Pool per-sequence scores by category (first-seen order) and average."""
    if len(evals) != len(categories):
        raise ContractError("one category per sequence evaluation is required")
    by_cat: dict[str, list[SequenceEval]] = {}
    for ev, cat in zip(evals, categories):
        by_cat.setdefault(cat, []).append(ev)
    pooled = {cat: pool(evs) for cat, evs in by_cat.items()}
    reports = [category_report(cat, pooled[cat]) for cat in by_cat if pooled[cat].frame_count]
    if not reports:
        raise ContractError("no scorable frames (every sequence has a single frame)")
    total = sum(r.frames for r in reports)
    mean = CategoryReport(
        "Mean", total,
        weighted_mean(reports, "success"), weighted_mean(reports, "precision"),
        weighted_mean(reports, "success_bev"), weighted_mean(reports, "precision_bev"),
    )
    return EvaluationResult(reports, mean, pooled)


REPORT_COLUMNS = ["category", "frames", "success_3d", "precision_3d", "success_bev", "precision_bev"]


def write_report(path: str | Path, result: EvaluationResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in [*result.categories, result.mean]:
            w.writerow([r.name, r.frames, f"{r.success:.4f}", f"{r.precision:.4f}",
                        f"{r.success_bev:.4f}", f"{r.precision_bev:.4f}"])


def read_report(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_curves(path: str | Path, result: EvaluationResult) -> None:
    """Long-format curve table: one row per (category, metric, threshold)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["category", "metric", "threshold", "value"])
        for cat, ev in result.pooled.items():
            if not ev.frame_count:
                continue
            for metric, curve, th in (
                ("success_3d", success_curve(ev.ious), IOU_THRESHOLDS),
                ("precision_3d", precision_curve(ev.dists), DIST_THRESHOLDS),
                ("success_bev", success_curve(ev.bev_ious), IOU_THRESHOLDS),
                ("precision_bev", precision_curve(ev.bev_dists), DIST_THRESHOLDS),
            ):
                for t, v in zip(th, curve):
                    w.writerow([cat, metric, f"{t:.4f}", f"{v:.6f}"])
