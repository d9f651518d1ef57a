import json
from pathlib import Path

import numpy as np
import pytest

from sttrack.errors import ConfigurationError, DimensionError
from sttrack.geometry import Box3D, GridConfig
from sttrack.harness.checks import golden_hashes
from sttrack.numerics import ParameterSet, Tensor
from sttrack.pillars import FeatureMap
from sttrack.stlm import (
    VARIANTS,
    PatchTokens,
    SpatioTemporalGrid,
    STLMConfig,
    build_grid,
    deformable_attend,
    fuse_current,
    init_stlm_params,
    mask_fusion,
    patchify,
    positional_embedding,
    sampling_terms,
    stlm_forward,
)

from oracles import attn_params, naive_conv, straight_line_attention

GOLDENS = Path(__file__).with_name("goldens.json")


def grid_of(values, ages=None):
    n = values.shape[0]
    return SpatioTemporalGrid(Tensor(values), list(ages or range(n - 1, -1, -1)))


# -- deformable attention -----------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_deformable_attend_matches_straight_line_oracle(seed):
    rng = np.random.default_rng(seed)
    N, S, C, K, L = 3, 4, 4, 2, 2
    G = rng.normal(size=(N, S, C))
    P = attn_params(C, L, K, rng, scale=1.0)
    cfg = STLMConfig(patch_r=2, heads=L, samples=K, c3=C)
    got = deformable_attend(grid_of(G), P, cfg).values.data
    np.testing.assert_allclose(got, straight_line_attention(G, P, L, K), rtol=0, atol=1e-10)


def _zero_offsets(P):
    P.set("stlm.attn.offset.weight", np.zeros_like(P["stlm.attn.offset.weight"].data))
    P.set("stlm.attn.offset.bias", np.zeros_like(P["stlm.attn.offset.bias"].data))


def test_self_sampling_identity(rng):
    N, S, C = 3, 4, 4
    G = rng.normal(size=(N, S, C))
    P = attn_params(C, 1, 1, rng)
    _zero_offsets(P)
    for name in ("value", "out"):
        P.set(f"stlm.attn.{name}.weight", np.eye(C))
        P.set(f"stlm.attn.{name}.bias", np.zeros(C))
    got = deformable_attend(grid_of(G), P, STLMConfig(heads=1, samples=1, c3=C)).values.data
    assert np.array_equal(got, G)


def test_two_equal_samples_average_to_value_projection(rng):
    N, S, C = 2, 4, 4
    G = rng.normal(size=(N, S, C))
    P = attn_params(C, 1, 2, rng)
    _zero_offsets(P)
    P.set("stlm.attn.score.weight", np.zeros((C, 2)))
    P.set("stlm.attn.score.bias", np.zeros(2))
    P.set("stlm.attn.out.weight", np.eye(C))
    P.set("stlm.attn.out.bias", np.zeros(C))
    got = deformable_attend(grid_of(G), P, STLMConfig(heads=1, samples=2, c3=C)).values.data
    expected = G @ P["stlm.attn.value.weight"].data + P["stlm.attn.value.bias"].data
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-14)


def test_zero_offsets_uniform_weights_is_per_token_linear_map(rng):
    N, S, C, L, K = 3, 4, 8, 2, 3
    G = rng.normal(size=(N, S, C))
    P = attn_params(C, L, K, rng)
    _zero_offsets(P)
    P.set("stlm.attn.score.weight", np.zeros((C, L * K)))
    P.set("stlm.attn.score.bias", np.zeros(L * K))
    got = deformable_attend(grid_of(G), P, STLMConfig(heads=L, samples=K, c3=C)).values.data
    Wv, bv = P["stlm.attn.value.weight"].data, P["stlm.attn.value.bias"].data
    Wo, bo = P["stlm.attn.out.weight"].data, P["stlm.attn.out.bias"].data
    np.testing.assert_allclose(got, (G @ Wv + bv) @ Wo + bo, rtol=0, atol=1e-12)


def test_attention_weights_sum_to_one(rng):
    G = rng.normal(size=(4, 16, 8))
    P = attn_params(8, 2, 4, rng)
    _, w = sampling_terms(grid_of(G), P, STLMConfig(heads=2, samples=4, c3=8))
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)


def test_far_offsets_read_zero_padding(rng):
    G = rng.normal(size=(2, 4, 4))
    P = attn_params(4, 1, 1, rng)
    _zero_offsets(P)
    P.set("stlm.attn.offset.bias", np.array([50.0, 50.0]))
    P.set("stlm.attn.out.weight", np.eye(4))
    P.set("stlm.attn.out.bias", np.zeros(4))
    got = deformable_attend(grid_of(G), P, STLMConfig(heads=1, samples=1, c3=4)).values.data
    assert np.all(got == 0.0)


# -- spatial block ------------------------------------------------------------

def small_setup(rng, variant="full", R=4, c1=4):
    grid = GridConfig(W=8, H=8)
    cfg = STLMConfig(patch_r=R, heads=2, samples=2, variant=variant, c2=c1, c3=8, c4=6)
    p = ParameterSet(3)
    init_stlm_params(p, cfg, grid, c1)
    return grid, cfg, p


def test_mask_fusion_matches_conv_oracles(rng):
    grid, cfg, p = small_setup(rng)
    F = rng.normal(size=(8, 8, 4))
    M = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
    got = mask_fusion(FeatureMap(Tensor(F), grid), M, p).values.data
    inner = naive_conv(M[:, :, None], p["stlm.maskconv.weight"].data, p["stlm.maskconv.bias"].data, 1, 1) + F
    expected = np.maximum(naive_conv(inner, p["stlm.boxconv.weight"].data, p["stlm.boxconv.bias"].data, 1, 1), 0)
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_mask_fusion_zero_mask_zero_bias_is_boxconv_only(rng):
    grid, cfg, p = small_setup(rng)
    p.set("stlm.maskconv.bias", np.zeros(4))
    F = rng.normal(size=(8, 8, 4))
    got = mask_fusion(FeatureMap(Tensor(F), grid), np.zeros((8, 8)), p).values.data
    expected = np.maximum(naive_conv(F, p["stlm.boxconv.weight"].data, p["stlm.boxconv.bias"].data, 1, 1), 0)
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_mask_fusion_shape_mismatch(rng):
    grid, cfg, p = small_setup(rng)
    with pytest.raises(DimensionError):
        mask_fusion(FeatureMap(Tensor(np.zeros((8, 8, 4))), grid), np.zeros((4, 4)), p)


def test_patchify_tokens_follow_row_major_patches(rng):
    grid, cfg, p = small_setup(rng)
    F = rng.normal(size=(8, 8, 4))
    tok = patchify(FeatureMap(Tensor(F), grid), p, 4)
    assert tok.tokens.shape == (16, 8)
    W, b = p["stlm.patchconv.weight"].data, p["stlm.patchconv.bias"].data
    for k in range(16):
        r, c = divmod(k, 4)
        patch = F[2 * r:2 * r + 2, 2 * c:2 * c + 2]
        np.testing.assert_allclose(tok.tokens.data[k], b + np.einsum("ijc,ijco->o", patch, W), atol=1e-12)


def test_patch_locality(rng):
    grid, cfg, p = small_setup(rng)
    F = rng.normal(size=(8, 8, 4))
    base = patchify(FeatureMap(Tensor(F), grid), p, 4).tokens.data
    F2 = F.copy()
    F2[5, 2, 1] += 3.0  # patch (2, 1) -> token 9
    moved = patchify(FeatureMap(Tensor(F2), grid), p, 4).tokens.data
    changed = np.flatnonzero(np.any(moved != base, axis=1))
    assert changed.tolist() == [9]


def test_patchify_constant_map_gives_identical_tokens(rng):
    grid, cfg, p = small_setup(rng)
    tok = patchify(FeatureMap(Tensor(np.full((8, 8, 4), 0.7)), grid), p, 4).tokens.data
    assert np.all(tok == tok[0])


def test_patchify_indivisible():
    p = ParameterSet(0)
    p.add("stlm.patchconv.weight", np.zeros((2, 2, 1, 1)))
    p.add("stlm.patchconv.bias", np.zeros(1))
    with pytest.raises(ConfigurationError):
        patchify(FeatureMap(Tensor(np.zeros((6, 6, 1))), GridConfig(W=6, H=6)), p, 4)


def test_build_grid_rows_and_permutation(rng):
    sets = [PatchTokens(Tensor(rng.normal(size=(4, 3))), 2, (4, 4)) for _ in range(3)]
    g = build_grid(sets, [2, 1, 0])
    for n in range(3):
        assert np.array_equal(g.values.data[n], sets[n].tokens.data)
    flipped = build_grid(sets[::-1], [0, 1, 2])
    assert np.array_equal(flipped.values.data, g.values.data[::-1])
    with pytest.raises(DimensionError):
        build_grid([sets[0], PatchTokens(Tensor(np.zeros((5, 3))), 2, (4, 4))], [1, 0])


# -- fuse current -------------------------------------------------------------

def test_fuse_current_stage_oracle(rng):
    grid, cfg, p = small_setup(rng)
    att = rng.normal(size=(3, 16, 8))
    cur = rng.normal(size=(8, 8, 4))
    got = fuse_current(grid_of(att), FeatureMap(Tensor(cur), grid), p, 4).values.data
    lifted = att[-1] @ p["stlm.lift.weight"].data + p["stlm.lift.bias"].data
    up = np.zeros((8, 8, lifted.shape[1]))
    for i in range(8):
        for j in range(8):
            up[i, j] = lifted[(i // 2) * 4 + j // 2]
    cat = np.concatenate([up, cur], axis=2)
    expected = naive_conv(cat, p["stlm.fuse.weight"].data, p["stlm.fuse.bias"].data, 1, 1)
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_fuse_current_pass_through(rng):
    grid, cfg, p = small_setup(rng)
    c4, c1 = 6, 4
    w = np.zeros((3, 3, c4 + c1, c1))
    w[1, 1, c4:, :] = np.eye(c1)
    p.set("stlm.fuse.weight", w)
    p.set("stlm.fuse.bias", np.zeros(c1))
    p.set("stlm.lift.bias", np.zeros(c4))
    cur = rng.normal(size=(8, 8, 4))
    got = fuse_current(grid_of(np.zeros((2, 16, 8))), FeatureMap(Tensor(cur), grid), p, 4).values.data
    assert np.array_equal(got, cur)


# -- composed forward and variants --------------------------------------------

def features(rng, n, grid, c1=4):
    return [FeatureMap(Tensor(rng.normal(size=(grid.H, grid.W, c1))), grid, float(n - 1 - i)) for i in range(n)]


def test_stlm_forward_two_frame_mode(rng):
    grid, cfg, p = small_setup(rng)
    U = stlm_forward(features(rng, 2, grid), [Box3D(0, 0, 0, 1.8, 4.2, 1.6, 0)], p, cfg)
    assert U.values.shape == (8, 8, 4)


def test_stlm_forward_box_count_checked(rng):
    grid, cfg, p = small_setup(rng)
    with pytest.raises(DimensionError):
        stlm_forward(features(rng, 3, grid), [Box3D(0, 0, 0, 1, 1, 1, 0)], p, cfg)


def test_duplicate_past_frame_invariance_with_forced_offsets(rng):
    grid, cfg, p = small_setup(rng)
    # every current-row query samples only its own token
    p.set("stlm.attn.offset.weight", np.zeros_like(p["stlm.attn.offset.weight"].data))
    p.set("stlm.attn.offset.bias", np.zeros_like(p["stlm.attn.offset.bias"].data))
    box = Box3D(0.1, -0.2, 0, 1.8, 4.2, 1.6, 0.3)
    past = FeatureMap(Tensor(rng.normal(size=(8, 8, 4))), grid, 1.0)
    cur = FeatureMap(Tensor(rng.normal(size=(8, 8, 4))), grid, 0.0)
    a = stlm_forward([past, cur], [box], p, cfg).values.data
    b = stlm_forward([past, past, cur], [box, box], p, cfg).values.data
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_runs(rng, variant):
    grid, cfg, p = small_setup(rng, variant)
    boxes = [Box3D(0, 0, 0, 1.8, 4.2, 1.6, 0)] * 2
    U = stlm_forward(features(rng, 3, grid), boxes, p, cfg)
    assert U.values.shape == (8, 8, 4)
    assert np.isfinite(U.values.data).all()


def test_variant_parameter_sets_differ(rng):
    names = {v: tuple(small_setup(rng, v)[2].names()) for v in VARIANTS}
    assert "stlm.maskconv.weight" not in names["no_mask"]
    assert "stlm.boxconv.weight" not in names["no_boxconv"]
    assert "stlm.attn.query.weight" in names["dense"]
    assert names["pos_embed"] == names["full"]  # same weights, different graph


def test_dot_variant_multiplies_mask(rng):
    grid, cfg, p = small_setup(rng, "dot")
    F = rng.normal(size=(8, 8, 4))
    M = np.zeros((8, 8))
    M[2:5, 3:6] = 1.0
    got = mask_fusion(FeatureMap(Tensor(F), grid), M, p, "dot").values.data
    expected = np.maximum(naive_conv(F * M[:, :, None], p["stlm.boxconv.weight"].data,
                                     p["stlm.boxconv.bias"].data, 1, 1), 0)
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_positional_embedding_distinguishes_positions():
    pe = positional_embedding(4, 16, 8)
    flat = pe.reshape(-1, 8)
    assert len({tuple(np.round(r, 12)) for r in flat}) == 64
    assert np.all(np.abs(pe) <= 1.0)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        STLMConfig(variant="sparse")
    with pytest.raises(ConfigurationError):
        STLMConfig(c3=10, heads=4)
    with pytest.raises(ConfigurationError):
        STLMConfig(patch_r=3).validate(GridConfig(), 32)
    with pytest.raises(ConfigurationError):
        STLMConfig(c2=16).validate(GridConfig(), 32)


def test_golden_hashes_stable_and_distinct():
    stored = json.loads(GOLDENS.read_text())
    current = golden_hashes()
    assert current == stored
    assert len(set(current.values())) == len(current)
    for variant in VARIANTS:
        assert f"stlm.{variant}" in current
