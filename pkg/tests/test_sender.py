import numpy as np
import pytest

from featex.core import FeatureMap, PatchGrid, LAPLACIAN_4
from featex.errors import AllocationError
from featex.params import (ClassifierParams, SpatialHeadParams, build_params,
                           classifier_head, spatial_head)
from featex.sender import (GROUP_MARGINAL, GROUP_PRIMARY, GROUP_SECONDARY,
                           ChannelWeights, GroupAssignment, Sender, build_message,
                           channel_saliency, classify_groups, ordering_violations,
                           patch_stats, predict_spatial, score_patches,
                           sort_channels, transmission_order)

from conftest import brute_patch_scores, exp_normalize


def zero_spatial_params(channels):
    return SpatialHeadParams(np.zeros((16, channels, 3, 3)), np.zeros(16),
                             np.zeros((1, 16, 3, 3)), np.zeros(1))


# ------------------------------------------------------------ spatial head

def test_zero_head_on_zero_input_gives_half():
    x = FeatureMap(np.zeros((6, 6, 3)))
    out = predict_spatial(x, zero_spatial_params(3))
    assert np.allclose(out.values, 0.5)


def test_spatial_output_bounded(rng):
    x = FeatureMap(rng.normal(0, 5, (8, 8, 4)))
    out = predict_spatial(x, spatial_head(4, seed=3, style="uniform"))
    assert np.all(out.values >= 0.0) and np.all(out.values <= 1.0)


def test_spatial_deterministic_seed42(rng):
    x = FeatureMap(rng.normal(size=(8, 8, 4)))
    p = spatial_head(4, seed=42)
    a = predict_spatial(x, p)
    b = predict_spatial(x, spatial_head(4, seed=42))
    assert a.values.tobytes() == b.values.tobytes()


# ------------------------------------------------------------ patch scores

def test_constant_channel_scores_only_at_borders():
    x = FeatureMap(np.full((8, 8, 1), 3.0))
    grid = PatchGrid(8, 8, 2)
    table = score_patches(x, grid)
    scores = table.scores[:, 0].reshape(4, 4)
    assert np.allclose(scores[1:-1, 1:-1], 0.0)   # interior patches
    assert np.all(scores[0, :] > 0)               # zero padding bites the rim
    assert np.all(scores[:, 0] > 0)


def test_single_patch_impulse_score_is_eight():
    x = np.zeros((5, 5, 1))
    x[2, 2, 0] = 1.0
    table = score_patches(FeatureMap(x), PatchGrid(5, 5, 5))
    assert table.scores[0, 0] == pytest.approx(8.0)  # |-4| + 4*|1|


def test_scores_scale_homogeneously(rng):
    data = rng.normal(size=(8, 8, 3))
    grid = PatchGrid(8, 8, 2)
    base = score_patches(FeatureMap(data), grid).scores
    scaled = score_patches(FeatureMap(2.5 * data), grid).scores
    assert np.allclose(scaled, 2.5 * base, atol=1e-9)
    assert np.array_equal(np.argsort(base, axis=1), np.argsort(scaled, axis=1))


def test_scores_match_brute_oracle(rng):
    data = rng.normal(size=(8, 8, 3))
    for p in (1, 2, 4):
        got = score_patches(FeatureMap(data), PatchGrid(8, 8, p)).scores
        want = brute_patch_scores(data, LAPLACIAN_4, p)
        assert np.allclose(got, want, atol=1e-9)


# ------------------------------------------------------------ grouping

def _table_and_stats(rng, h=8, w=8, c=4, p=2):
    x = FeatureMap(rng.normal(size=(h, w, c)))
    grid = PatchGrid(h, w, p)
    return score_patches(x, grid), patch_stats(x, grid), grid, x


def test_zero_classifier_uniform_and_lowest_priority(rng):
    scores, stats, _, _ = _table_and_stats(rng)
    groups = classify_groups(scores, stats, ClassifierParams(np.zeros((3, 3)),
                                                             np.zeros(3)))
    assert np.allclose(groups.probs, 1.0 / 3.0)
    # exact ties resolve toward the lower-priority group
    assert np.all(groups.labels == GROUP_MARGINAL)


def test_identical_inputs_identical_rows(rng):
    scores, stats, _, _ = _table_and_stats(rng)
    scores.scores[:, 1] = scores.scores[:, 0]
    stats.mean[:, 1] = stats.mean[:, 0]
    stats.peak[:, 1] = stats.peak[:, 0]
    groups = classify_groups(scores, stats, classifier_head(5, style="uniform"))
    assert np.allclose(groups.probs[:, 0], groups.probs[:, 1])


def test_probability_rows_sum_to_one(rng):
    scores, stats, _, _ = _table_and_stats(rng, c=6)
    groups = classify_groups(scores, stats, classifier_head(9, style="uniform"))
    assert np.allclose(groups.probs.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(groups.probs > 0)


def test_semantic_classifier_orders_by_magnitude():
    # strong structured channel -> primary, quiet channel -> marginal
    q, c = 1, 2
    scores = np.array([[12.0, 0.1]])
    mean = np.array([[0.8, 0.02]])
    peak = np.array([[1.0, 0.05]])
    from featex.sender import PatchScoreTable, PatchStats
    groups = classify_groups(PatchScoreTable(scores, 1),
                             PatchStats(mean, peak), classifier_head(0))
    assert groups.labels[0, 0] == GROUP_PRIMARY
    assert groups.labels[0, 1] == GROUP_MARGINAL
    del q, c


# ------------------------------------------------------------ saliency map

def test_zero_scores_zero_saliency(rng):
    x = FeatureMap(np.zeros((4, 4, 3)))
    grid = PatchGrid(4, 4, 2)
    scores = score_patches(x, grid)
    stats = patch_stats(x, grid)
    groups = classify_groups(scores, stats, classifier_head(1, style="uniform"))
    sal = channel_saliency(scores, groups, grid)
    assert np.all(sal.values == 0.0)


def test_single_dominant_channel_saliency_near_one(rng):
    from featex.sender import PatchScoreTable
    scores = PatchScoreTable(np.array([[5.0, 0.0, 0.0]]), 4)
    probs = np.full((1, 3, 3), 1.0 / 3.0)
    groups = GroupAssignment(probs, np.full((1, 3), GROUP_MARGINAL),
                             np.array([1.0, 1.0, 1.0]))
    sal = channel_saliency(scores, groups, PatchGrid(4, 4, 4))
    assert sal.values[0, 0] == pytest.approx(1.0, abs=1e-6)


def test_saliency_invariant_to_channel_permutation(rng):
    x = rng.normal(size=(4, 4, 5))
    grid = PatchGrid(4, 4, 2)
    params = classifier_head(3, style="uniform")

    def saliency_of(data):
        fm = FeatureMap(data)
        s = score_patches(fm, grid)
        g = classify_groups(s, patch_stats(fm, grid), params)
        return channel_saliency(s, g, grid).values

    perm = rng.permutation(5)
    assert np.allclose(saliency_of(x), saliency_of(x[:, :, perm]), atol=1e-12)


# ------------------------------------------------------------ channel sort

def test_equal_scores_uniform_weights():
    from featex.sender import PatchScoreTable
    w = sort_channels(PatchScoreTable(np.full((2, 4), 3.0), 1))
    assert np.allclose(w.weights, 0.25)


def test_sort_preserves_argsort(rng):
    from featex.sender import PatchScoreTable
    s = np.abs(rng.normal(size=(3, 6)))
    w = sort_channels(PatchScoreTable(s, 1))
    assert np.array_equal(np.argsort(w.weights, axis=1), np.argsort(s, axis=1))


def test_sort_matches_exp_normalize(rng):
    from featex.sender import PatchScoreTable
    s = np.abs(rng.normal(size=(2, 5)))
    w = sort_channels(PatchScoreTable(s, 1))
    for k in range(2):
        assert np.allclose(w.weights[k], exp_normalize(s[k]), atol=1e-12)


# ------------------------------------------------------------ message build

def _one_per_group_assignment():
    probs = np.zeros((1, 3, 3))
    labels = np.array([[GROUP_SECONDARY, GROUP_PRIMARY, GROUP_MARGINAL]])
    for c, g in enumerate(labels[0]):
        probs[0, c, g] = 1.0
    return GroupAssignment(probs, labels, np.array([1.0, 0.5, 0.1]))


def test_empty_plan_empty_payload(rng):
    x = FeatureMap(rng.normal(size=(4, 4, 3)))
    grid = PatchGrid(4, 4, 4)
    groups = _one_per_group_assignment()
    weights = ChannelWeights(np.full((1, 3), 1.0 / 3.0))
    msg = build_message(x, np.zeros(1, dtype=int), groups, weights, grid, 0, 1, 0)
    assert msg.blocks == ()


def test_priority_beats_weight_across_groups(rng):
    x = FeatureMap(rng.normal(size=(4, 4, 3)))
    grid = PatchGrid(4, 4, 4)
    groups = _one_per_group_assignment()
    # marginal channel has the top weight but must still come last
    weights = ChannelWeights(np.array([[0.3, 0.2, 0.5]]))
    msg = build_message(x, np.array([2]), groups, weights, grid, 0, 1, 0)
    sent = [b.channel for b in msg.blocks]
    assert sent == [1, 0]  # primary first, then secondary; marginal never
    assert not ordering_violations(msg, groups)


def test_full_grant_sends_everything(rng):
    data = rng.normal(size=(4, 4, 3))
    x = FeatureMap(data)
    grid = PatchGrid(4, 4, 2)
    c = 3
    scores = score_patches(x, grid)
    stats = patch_stats(x, grid)
    groups = classify_groups(scores, stats, classifier_head(2, style="uniform"))
    weights = sort_channels(scores)
    msg = build_message(x, np.full(grid.num_patches, c), groups, weights, grid, 0, 1, 0)
    assert len(msg.blocks) == grid.num_patches * c
    rebuilt = np.zeros_like(data)
    for blk in msg.blocks:
        rs, cs = grid.patch_slices(blk.patch)
        rebuilt[rs, cs, blk.channel] = blk.values.reshape(2, 2)
    assert np.allclose(rebuilt, data.astype(np.float32), atol=1e-7)


def test_block_count_matches_grants(rng):
    x = FeatureMap(rng.normal(size=(8, 8, 5)))
    grid = PatchGrid(8, 8, 2)
    scores = score_patches(x, grid)
    groups = classify_groups(scores, patch_stats(x, grid),
                             classifier_head(7, style="uniform"))
    weights = sort_channels(scores)
    grants = rng.integers(0, 6, grid.num_patches)
    msg = build_message(x, grants, groups, weights, grid, 0, 1, 0)
    assert len(msg.blocks) == int(grants.sum())
    assert not ordering_violations(msg, groups)


def test_overgrant_raises(rng):
    x = FeatureMap(rng.normal(size=(4, 4, 2)))
    grid = PatchGrid(4, 4, 4)
    groups = _one_per_group_assignment()
    weights = ChannelWeights(np.full((1, 3), 1.0 / 3.0))
    with pytest.raises(AllocationError):
        build_message(x, np.array([4]), groups, weights, grid, 0, 1, 0)


def test_weight_ties_break_by_channel_index():
    labels = np.full((1, 4), GROUP_PRIMARY)
    probs = np.zeros((1, 4, 3))
    probs[:, :, GROUP_PRIMARY] = 1.0
    groups = GroupAssignment(probs, labels, np.array([1.0, 0.5, 0.1]))
    weights = ChannelWeights(np.full((1, 4), 0.25))
    assert transmission_order(groups, weights, 0) == [0, 1, 2, 3]


def test_sender_bundle_determinism(rng):
    x = FeatureMap(rng.normal(size=(8, 8, 4)))
    params = build_params(42, 4, 4)
    s = Sender(3, params.spatial, params.classifier)
    a = s.make_bundle(x, 2)
    b = s.make_bundle(x, 2)
    assert a.spatial.values.tobytes() == b.spatial.values.tobytes()
    assert a.saliency.values.tobytes() == b.saliency.values.tobytes()
    assert np.array_equal(a.groups.labels, b.groups.labels)
