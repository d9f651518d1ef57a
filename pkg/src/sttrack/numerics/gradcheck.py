"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ContractError, NumericError
from .params import ParameterSet
from .tensor import Tensor

# gradients smaller than this are compared absolutely rather than relatively
MAGNITUDE_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    retried: dict[str, int] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.errors.items() if not v < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for name, err in self.errors.items():
            flag = "ok" if err < self.tolerance else "FAIL"
            extra = f" retried={self.retried[name]}" if self.retried.get(name) else ""
            out.append(f"{flag:4s} {name:48s} rel_err={err:.3e} entries={self.checked[name]}{extra}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max deviation scaled by the larger gradient magnitude of the two."""
    diff = np.max(np.abs(analytic - numeric), initial=0.0)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), MAGNITUDE_FLOOR)
    return float(diff / scale)


def _pick_entries(analytic: np.ndarray, limit: int | None, rng: np.random.Generator) -> np.ndarray:
    flat = np.abs(analytic.reshape(-1))
    if limit is None or flat.size <= limit:
        return np.arange(flat.size)
    # half the budget on the largest gradients, the rest uniformly at random
    top = np.argsort(-flat, kind="stable")[: limit // 2]
    rest = np.setdiff1d(np.arange(flat.size), top)
    extra = rng.choice(rest, size=limit - top.size, replace=False)
    return np.sort(np.concatenate([top, extra]))


def _central(f, params: ParameterSet, flat: np.ndarray, i: int, eps: float, name: str) -> float:
    orig = flat[i]
    flat[i] = orig + eps
    up = f(params).item()
    flat[i] = orig - eps
    down = f(params).item()
    flat[i] = orig
    if not (np.isfinite(up) and np.isfinite(down)):
        raise NumericError(f"objective not finite while probing {name}")
    return (up - down) / (2 * eps)


def finite_diff_check(
    f: Callable[[ParameterSet], Tensor],
    params: ParameterSet,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    retry_epsilon: float | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of scalar ``f(params)`` with central differences.

    ``max_entries`` caps how many coordinates of each parameter are probed.
    With ``retry_epsilon`` set, coordinates that disagree at ``epsilon`` are
    probed once more with the smaller step. A probe that straddles a ReLU or
    max kink measures a blend of two one-sided slopes, and that error shrinks
    with the step; a wrong analytic gradient does not.
    """
    if epsilon <= 0 or (retry_epsilon is not None and not 0 < retry_epsilon < epsilon):
        raise ContractError("epsilon must be positive and retry_epsilon smaller than epsilon")
    params.zero_grad()
    loss = f(params)
    if not np.isfinite(loss.data).all():
        raise NumericError("objective is not finite")
    loss.backward()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, t in params.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        idx = _pick_entries(analytic, max_entries, rng)
        flat = t.data.reshape(-1)
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            numeric[n] = _central(f, params, flat, i, epsilon, name)
        picked = analytic.reshape(-1)[idx]
        retried = 0
        if retry_epsilon is not None:
            scale = max(np.max(np.abs(picked), initial=0.0), np.max(np.abs(numeric), initial=0.0), MAGNITUDE_FLOOR)
            for n in np.flatnonzero(np.abs(picked - numeric) / scale >= tolerance):
                numeric[n] = _central(f, params, flat, idx[n], retry_epsilon, name)
                retried += 1
        report.errors[name] = relative_error(picked, numeric)
        report.checked[name] = int(idx.size)
        report.retried[name] = retried
    params.zero_grad()
    return report
