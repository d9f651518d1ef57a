import math
from dataclasses import replace

import numpy as np
import pytest

from sttrack.errors import ConfigurationError, ContractError
from sttrack.harness.checks import GOLDEN_PATTERNS, OP_CASES, array_hash, op_gradcheck
from sttrack.harness.config import RunConfig, TrainConfig, build_run_config, dump_config, load_config, parse_text
from sttrack.harness.dataset import SequenceData, list_sequences, load_sequence, write_sequence
from sttrack.harness.plots import plot_curves, plot_loss, plot_track
from sttrack.harness.synth import SceneSpec, generate_sequence, subsample_sequence
from sttrack.harness.train import train_toy
from sttrack.evaluation import evaluate_sequences
from sttrack.model import ModelConfig, build_params


# -- synthetic scenes ---------------------------------------------------------

def test_synth_is_deterministic():
    a_clouds, a_gt = generate_sequence(SceneSpec(seed=9, frames=5))
    b_clouds, b_gt = generate_sequence(SceneSpec(seed=9, frames=5))
    assert a_gt == b_gt
    assert all(np.array_equal(x, y) for x, y in zip(a_clouds, b_clouds))
    c_clouds, _ = generate_sequence(SceneSpec(seed=10, frames=5))
    assert not np.array_equal(a_clouds[0], c_clouds[0])


def test_static_scene_has_identical_boxes():
    _, gt = generate_sequence(SceneSpec(motion="static", frames=6, seed=2))
    assert all(b == gt[0] for b in gt)


def test_constant_velocity_positions():
    spec = SceneSpec(speed=0.2, heading=0.3, frames=10, seed=4)
    _, gt = generate_sequence(spec)
    for k, b in enumerate(gt):
        assert b.x == pytest.approx(gt[0].x + 0.2 * k * math.cos(0.3), abs=1e-12)
        assert b.y == pytest.approx(gt[0].y + 0.2 * k * math.sin(0.3), abs=1e-12)


def test_constant_turn_heading_advances():
    _, gt = generate_sequence(SceneSpec(motion="constant_turn", yaw_rate=0.05, frames=5, seed=1))
    assert gt[4].theta == pytest.approx(gt[0].theta + 0.2)
    steps = [math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(gt, gt[1:])]
    np.testing.assert_allclose(steps, 0.2)


def test_point_counts_and_surface_sampling():
    spec = SceneSpec(target_points=150, clutter_points=40, distractors=1, noise_sigma=0.0, frames=2, seed=5)
    clouds, gt = generate_sequence(spec)
    assert clouds[0].shape == (150 * 2 + 40, 3)
    target = clouds[0][:150]
    b = gt[0]
    c, s = math.cos(b.theta), math.sin(b.theta)
    u = np.column_stack([c * (target[:, 0] - b.x) + s * (target[:, 1] - b.y),
                         -s * (target[:, 0] - b.x) + c * (target[:, 1] - b.y), target[:, 2] - b.z])
    on_face = np.isclose(np.abs(u) / (np.array([b.l, b.w, b.h]) / 2), 1.0, atol=1e-5).any(axis=1)
    assert on_face.all()


def test_subsample_stride():
    clouds, gt = generate_sequence(SceneSpec(frames=11, seed=0))
    c, g = subsample_sequence(clouds, gt, 5)
    assert g == [gt[0], gt[5], gt[10]] and len(c) == 3
    with pytest.raises(ConfigurationError):
        subsample_sequence(clouds, gt, 0)


def test_scene_validation():
    with pytest.raises(ConfigurationError):
        SceneSpec(motion="teleport")
    with pytest.raises(ConfigurationError):
        SceneSpec(frames=0)


# -- dataset layout -----------------------------------------------------------

def test_sequence_round_trip_is_bit_exact(tmp_path):
    clouds, gt = generate_sequence(SceneSpec(frames=4, seed=8))
    write_sequence(tmp_path, SequenceData("s1", clouds, gt, "van"))
    back = load_sequence(tmp_path, "s1")
    assert back.gt == gt and back.category == "van"
    assert all(np.array_equal(a, b) for a, b in zip(clouds, back.clouds))
    assert list_sequences(tmp_path) == ["s1"]


def test_dataset_errors(tmp_path):
    with pytest.raises(ContractError):
        list_sequences(tmp_path)
    clouds, gt = generate_sequence(SceneSpec(frames=3, seed=8))
    base = write_sequence(tmp_path, SequenceData("s", clouds, gt))
    (base / "velodyne" / "000002.bin").unlink()
    with pytest.raises(ContractError):
        load_sequence(tmp_path, "s")


# -- configuration ------------------------------------------------------------

def test_config_rejects_unknown_and_duplicate_keys():
    with pytest.raises(ConfigurationError, match="unknown key"):
        parse_text("train.lrate = 0.1")
    with pytest.raises(ConfigurationError, match="duplicate"):
        parse_text("train.lr = 0.1\ntrain.lr = 0.2")
    with pytest.raises(ConfigurationError):
        parse_text("just words")
    with pytest.raises(ConfigurationError):
        build_run_config(parse_text("train.steps = many"))


def test_config_comments_and_defaults():
    cfg = build_run_config(parse_text("# comment\n\ntrain.lr = 0.05  # trailing\n"))
    assert cfg.train.lr == 0.05
    assert cfg.train == replace(TrainConfig(), lr=0.05)
    assert build_run_config({}) == RunConfig()


def test_config_dump_parse_round_trip(tmp_path):
    text = ("grid.b = 2\nstlm.variant = dense\ntrack.pattern = 0,2,4\nhead.assignment = gaussian\n"
            "head.gaussian_sigma = 1.5\ntrain.batch = 3\nscene.motion = static\nscene.seed = 7\n")
    path = tmp_path / "a.conf"
    path.write_text(text)
    cfg, scene = load_config(path)
    assert cfg.model.stlm.variant == "dense" and cfg.model.pattern.offsets == (0, 2, 4)
    assert cfg.model.gaussian_sigma == 1.5 and scene.seed == 7
    again = tmp_path / "b.conf"
    again.write_text(dump_config(cfg, scene))
    assert load_config(again) == (cfg, scene)


def test_bad_assignment_and_variant():
    with pytest.raises(ConfigurationError):
        build_run_config(parse_text("head.assignment = nearest"))
    with pytest.raises(ConfigurationError):
        build_run_config(parse_text("stlm.variant = magic"))


# -- training -----------------------------------------------------------------

def tiny_config(steps, **train):
    model = ModelConfig(cp=4, c1=8, head_hidden=4,
                        stlm=replace(ModelConfig().stlm, c2=8, c3=8, c4=8, heads=2))
    return RunConfig(model=model, train=TrainConfig(steps=steps, batch=2, sequences=2, **train))


STATIC = SceneSpec(motion="static", frames=6, seed=3, clutter_points=100)


def test_zero_steps_leaves_parameters_unchanged():
    cfg = tiny_config(0)
    fresh = train_toy(cfg, STATIC).params
    ref = build_params(cfg.model, cfg.param_seed)
    assert all(np.array_equal(fresh[n].data, ref[n].data) for n in ref)


def test_training_is_deterministic():
    a = train_toy(tiny_config(3), STATIC)
    b = train_toy(tiny_config(3), STATIC)
    assert a.losses == b.losses
    assert all(np.array_equal(a.params[n].data, b.params[n].data) for n in a.params)


def test_loss_decreases_on_static_scene():
    cfg = RunConfig(train=TrainConfig(steps=100, batch=2, sequences=2, lr=0.02))
    res = train_toy(cfg, STATIC)
    assert all(math.isfinite(v) for v in res.losses)
    assert np.mean(res.losses[-10:]) < 0.8 * np.mean(res.losses[:10])
    assert res.components[-1]["heatmap"] < 0.5 * res.components[0]["heatmap"]


# -- checks and plots ---------------------------------------------------------

@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_every_op_case_passes(name):
    rep = op_gradcheck(name)
    assert rep.passed, rep.lines()


def test_array_hash_ignores_sign_of_zero_and_tiny_noise():
    a = np.array([0.0, 1.0, 2.5])
    assert array_hash(a) == array_hash(np.array([-0.0, 1.0 + 1e-13, 2.5]))
    assert array_hash(a) != array_hash(a + 1e-6)


def test_golden_patterns_cover_the_ablation_table():
    assert len(GOLDEN_PATTERNS) == 9 and len(set(GOLDEN_PATTERNS)) == 9


def test_plots_are_written(tmp_path):
    clouds, gt = generate_sequence(SceneSpec(frames=6, seed=1))
    pred = [b.translated(0.1, 0, 0) for b in gt]
    res = evaluate_sequences([pred], [gt], ["car"])
    paths = plot_curves(res, tmp_path)
    paths.append(plot_loss([3.0, 2.0, 1.5], tmp_path / "loss.png"))
    paths.append(plot_track(pred, gt, tmp_path / "track.png", "s"))
    for p in paths:
        assert p.is_file() and p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
