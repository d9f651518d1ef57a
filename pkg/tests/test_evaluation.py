import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sttrack.errors import ContractError
from sttrack.evaluation import (
    CategoryReport,
    evaluate_sequence,
    evaluate_sequences,
    pool,
    precision,
    precision_curve,
    read_report,
    success,
    success_curve,
    summarize,
    weighted_mean,
    write_curves,
    write_report,
)
from sttrack.geometry import Box3D

unit = st.floats(0.0, 1.0)
dist = st.floats(0.0, 5.0)


def fine_auc(values, lo, hi, hit, n=20001):
    """Dense-grid trapezoid oracle for an OPE curve."""
    th = np.linspace(lo, hi, n)
    curve = np.array([np.mean([hit(v, t) for v in values]) for t in th])
    return 100 * np.trapezoid(curve, th) / (hi - lo)


# -- fixed values -------------------------------------------------------------

def test_perfect_and_zero_scores():
    assert success([1.0] * 7) == 100.0
    assert precision([0.0] * 7) == 100.0
    assert success([0.0] * 7) == 0.0
    assert precision([10.0] * 7) == 0.0


def test_constant_one_metre_error_is_half():
    assert abs(precision([1.0] * 50) - 50.0) <= 0.5


# A 201-point trapezoid shifts each step of the curve by at most half a grid
# step, so the area is off by at most 0.25 points however many frames there are.
TRAPEZOID_BOUND = 100 * 0.005 / 2


@pytest.mark.parametrize("values", [[0.2, 0.8], [0.2013, 0.7968], [0.5], [0.11, 0.33, 0.91]])
def test_success_against_dense_oracle(values):
    oracle = fine_auc(values, 0, 1, lambda v, t: v >= t and v > 0)
    assert abs(success(values) - oracle) <= TRAPEZOID_BOUND + 0.01


def test_precision_against_dense_oracle():
    values = [0.13, 0.71, 1.42]
    oracle = fine_auc(values, 0, 2, lambda v, t: v <= t)
    assert abs(precision(values) - oracle) <= TRAPEZOID_BOUND + 0.01


def test_curves_have_expected_ends():
    s = success_curve([0.3, 0.0, 1.0])
    assert s[0] == pytest.approx(2 / 3) and s[-1] == pytest.approx(1 / 3)
    p = precision_curve([0.0, 3.0])
    assert p[0] == 0.5 and p[-1] == 0.5


def test_empty_input_is_rejected():
    with pytest.raises(ContractError):
        success([])
    with pytest.raises(ContractError):
        precision([])


# -- properties ---------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.lists(unit, min_size=1, max_size=30), st.data())
def test_success_monotone_in_every_entry(values, data):
    i = data.draw(st.integers(0, len(values) - 1))
    bumped = list(values)
    bumped[i] = data.draw(st.floats(values[i], 1.0))
    assert success(bumped) >= success(values) - 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(dist, min_size=1, max_size=30), st.data())
def test_precision_monotone_in_every_entry(values, data):
    i = data.draw(st.integers(0, len(values) - 1))
    worse = list(values)
    worse[i] = data.draw(st.floats(values[i], 10.0))
    assert precision(worse) <= precision(values) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(unit, min_size=1, max_size=30), st.randoms(use_true_random=False))
def test_permutation_invariance(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert success(shuffled) == pytest.approx(success(values), abs=1e-12)
    assert precision(shuffled) == pytest.approx(precision(values), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(unit, min_size=1, max_size=20))
def test_scores_bounded(values):
    assert 0.0 <= success(values) <= 100.0
    assert 0.0 <= precision(values) <= 100.0


# -- weighted means from the published tables ---------------------------------

def reports(values, frames):
    return [CategoryReport(str(i), f, v, v) for i, (v, f) in enumerate(zip(values, frames))]


def test_kitti_mean_success_and_precision():
    frames = [6424, 6088, 1248, 308]
    assert abs(weighted_mean(reports([66.5, 60.4, 50.5, 75.3], frames)) - 62.6) <= 0.05
    assert abs(weighted_mean(reports([79.9, 89.4, 63.6, 93.9], frames)) - 82.9) <= 0.05


def test_nuscenes_mean_success():
    frames = [64159, 33227, 13587, 2292, 2953, 3352]
    values = [56.11, 37.58, 54.29, 36.23, 36.31, 48.13]
    assert abs(weighted_mean(reports(values, frames)) - 49.66) <= 0.05


def test_weighted_mean_rejects_bad_input():
    with pytest.raises(ContractError):
        weighted_mean([])
    with pytest.raises(ContractError):
        weighted_mean(reports([50.0], [0]))


# -- sequences, pooling, files ------------------------------------------------

def track(rng, n, noise):
    gt = [Box3D(0.2 * k, 0, 0, 1.8, 4.2, 1.6, 0.1) for k in range(n)]
    pred = [g.translated(*rng.normal(0, noise, 3)) for g in gt]
    pred[0] = gt[0]
    return pred, gt


def test_frame_zero_is_not_scored(rng):
    pred, gt = track(rng, 5, 0.0)
    pred[0] = gt[0].translated(50, 0, 0)
    ev = evaluate_sequence(pred, gt)
    assert ev.frame_count == 4 and all(v == pytest.approx(1.0) for v in ev.ious)


def test_misaligned_lengths_raise(rng):
    pred, gt = track(rng, 5, 0.1)
    with pytest.raises(ContractError):
        evaluate_sequence(pred[:-1], gt)
    with pytest.raises(ContractError):
        evaluate_sequences([pred], [gt, gt], ["car"])


def test_pooling_equals_concatenation(rng):
    evals = [evaluate_sequence(*track(rng, n, 0.3)) for n in (6, 9, 4)]
    joined = pool(evals)
    res = summarize(evals, ["car"] * 3)
    assert res.categories[0].success == success(joined.ious)
    assert res.categories[0].precision == precision(joined.dists)
    assert res.mean.frames == 5 + 8 + 3


def test_category_mean_weights_by_frames(rng):
    a = [track(rng, 11, 0.2) for _ in range(2)]
    b = [track(rng, 4, 0.6)]
    res = evaluate_sequences([p for p, _ in a + b], [g for _, g in a + b], ["car", "car", "ped"])
    assert [c.name for c in res.categories] == ["car", "ped"]
    car, ped = res.categories
    assert res.mean.success == pytest.approx((car.success * 20 + ped.success * 3) / 23)


def test_report_and_curve_files(tmp_path, rng):
    pred, gt = track(rng, 8, 0.2)
    res = evaluate_sequences([gt], [gt], ["car"])
    write_report(tmp_path / "r.csv", res)
    rows = read_report(tmp_path / "r.csv")
    assert [r["category"] for r in rows] == ["car", "Mean"]
    assert float(rows[0]["success_3d"]) == 100.0 and float(rows[0]["precision_3d"]) == 100.0
    write_curves(tmp_path / "c.csv", res)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "category,metric,threshold,value"
    assert len(lines) == 1 + 4 * 201
