"""Matplotlib figures written straight to files (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..evaluation import (  # noqa: E402
    DIST_THRESHOLDS,
    IOU_THRESHOLDS,
    EvaluationResult,
    precision_curve,
    success_curve,
)
from ..geometry import Box3D  # noqa: E402


def plot_curves(result: EvaluationResult, out_dir: str | Path) -> list[Path]:
    """Success and precision curves per category; returns the written paths."""
    out_dir = Path(out_dir)
    written = []
    for metric, curve_fn, th, attr, xlabel in (
        ("success", success_curve, IOU_THRESHOLDS, "ious", "overlap threshold (3D IoU)"),
        ("precision", precision_curve, DIST_THRESHOLDS, "dists", "center error threshold (m)"),
    ):
        fig, ax = plt.subplots(figsize=(5, 4))
        reports = {r.name: r for r in result.categories}
        for cat, ev in result.pooled.items():
            if not ev.frame_count:
                continue
            score = getattr(reports[cat], metric)
            ax.plot(th, 100 * curve_fn(getattr(ev, attr)), label=f"{cat} [{score:.1f}]")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(f"{metric} rate (%)")
        ax.set_ylim(0, 101)
        ax.grid(alpha=0.3)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{metric}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written


def plot_loss(losses: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(len(losses)), losses, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_track(predictions: Sequence[Box3D], ground_truth: Sequence[Box3D], path: str | Path,
               title: str = "") -> Path:
    """Top-down view of predicted and ground-truth centres with box outlines."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for boxes, colour, label in ((ground_truth, "tab:green", "ground truth"), (predictions, "tab:red", "tracked")):
        xy = np.array([[b.x, b.y] for b in boxes])
        ax.plot(xy[:, 0], xy[:, 1], ".-", color=colour, label=label, lw=1)
        for b in boxes:
            c = np.vstack([b.bev_corners(), b.bev_corners()[:1]])
            ax.plot(c[:, 0], c[:, 1], color=colour, lw=0.4, alpha=0.6)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
