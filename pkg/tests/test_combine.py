import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from rulefuse.combine import (
    binarize,
    combine_linear,
    combine_stacking,
    combine_vote,
    eval_loss,
    linear_map,
    stacking_logits,
)
from rulefuse.errors import AlignmentError
from rulefuse.fitting import LinearRule, StackingRule
from rulefuse.volumes import LabelVolume, Modality, ProbabilityVolume


def vol(values, spacing=(1.0, 1.0, 1.0)):
    return ProbabilityVolume(np.asarray(values, dtype=np.float64), spacing=spacing)


def const_vols(a, b, c, dims=(2, 2, 2)):
    return [vol(np.full(dims, v)) for v in (a, b, c)]


def test_one_hot_projection_is_bit_exact():
    rng = np.random.default_rng(0)
    vols = [vol(rng.random((4, 4, 4))) for _ in range(3)]
    out = combine_linear(vols, LinearRule(np.array([1.0, 0.0, 0.0])))
    np.testing.assert_array_equal(out.values, vols[0].values)
    assert out.modality is Modality.COMBINED


def test_equal_weights_mean():
    out = combine_linear(const_vols(0.9, 0.6, 0.3), [1 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(out.values, 0.6)


def test_weighted_combination_hand_value():
    out = combine_linear(const_vols(1.0, 0.5, 0.0), [0.6, 0.2, 0.2])
    np.testing.assert_allclose(out.values, 0.7)


def test_combine_linear_requires_alignment():
    vols = const_vols(0.1, 0.2, 0.3)
    vols[2] = vol(np.zeros((3, 2, 2)))
    with pytest.raises(AlignmentError):
        combine_linear(vols, [1 / 3, 1 / 3, 1 / 3])


def test_combine_linear_rejects_non_simplex():
    with pytest.raises(ValueError):
        combine_linear(const_vols(0.1, 0.2, 0.3), [0.5, 0.5, 0.5])


def test_zero_weight_ignores_modality_bit_exactly():
    rng = np.random.default_rng(1)
    vols = [vol(rng.random((4, 4, 4))) for _ in range(3)]
    rule = LinearRule(np.array([0.7, 0.3, 0.0]))
    base = combine_linear(vols, rule)
    vols[2] = vol(rng.random((4, 4, 4)))  # perturb the zero-weight modality
    again = combine_linear(vols, rule)
    np.testing.assert_array_equal(base.values, again.values)


@settings(deadline=None, max_examples=30)
@given(
    hnp.arrays(np.float64, (3, 3, 3, 3), elements=st.floats(0, 1)),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
)
def test_linear_map_additive_in_weights(stack, w1, w2):
    vols = [vol(stack[i]) for i in range(3)]
    w1, w2 = np.array(w1), np.array(w2)
    lhs = linear_map(vols, w1) + linear_map(vols, w2)
    rhs = linear_map(vols, w1 + w2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_stacking_zero_beta_gives_half():
    out = combine_stacking(const_vols(0.1, 0.9, 0.4), StackingRule(np.zeros(4)))
    np.testing.assert_allclose(out.values, 0.5)


def test_stacking_balanced_logit_gives_half():
    out = combine_stacking(const_vols(0.5, 0.123, 0.987), [4.0, 0.0, 0.0, -2.0])
    np.testing.assert_allclose(out.values, 0.5)


def test_stacking_saturates_for_wg_style_weights():
    # strong positive evidence from both T2W and DWI_hb drives sigma to ~1
    out = combine_stacking(const_vols(1.0, 1.0, 1.0), [18.17, 18.17, -0.20, -8.53])
    np.testing.assert_allclose(out.values, 1.0, atol=1e-8)


def test_threshold_equivalence_with_logits():
    rng = np.random.default_rng(2)
    vols = [vol(rng.random((5, 5, 5))) for _ in range(3)]
    beta = StackingRule(np.array([3.0, -2.0, 1.0, -1.0]))
    via_prob = binarize(combine_stacking(vols, beta), 0.5, min_region_voxels=1)
    direct = stacking_logits(vols, beta) > 0.0
    np.testing.assert_array_equal(via_prob.values, direct)


def test_vote_majority_cases():
    def mask(bits):
        return LabelVolume(np.array(bits, dtype=bool).reshape(1, 1, 3))

    a = mask([1, 1, 0])
    b = mask([1, 0, 0])
    c = mask([0, 1, 1])
    out = combine_vote([a, b, c])
    np.testing.assert_array_equal(out.values.ravel(), [True, True, False])


def test_vote_unanimity_identity():
    m = LabelVolume(np.random.default_rng(3).random((4, 4, 4)) > 0.5)
    out = combine_vote([m, m, m])
    np.testing.assert_array_equal(out.values, m.values)


def test_vote_equals_mean_threshold():
    rng = np.random.default_rng(4)
    masks = [LabelVolume(rng.random((6, 6, 6)) > 0.5) for _ in range(3)]
    voted = combine_vote(masks)
    as_probs = [ProbabilityVolume(m.values.astype(np.float64)) for m in masks]
    mean = combine_linear(as_probs, [1 / 3, 1 / 3, 1 / 3])
    thresholded = binarize(mean, 0.5, min_region_voxels=1)
    np.testing.assert_array_equal(voted.values, thresholded.values)


def test_binarize_uniform_below_threshold_empty():
    out = binarize(vol(np.full((4, 4, 4), 0.4)))
    assert out.count() == 0


def test_binarize_threshold_is_strict():
    out = binarize(vol(np.full((4, 4, 4), 0.5)), threshold=0.5, min_region_voxels=1)
    assert out.count() == 0


def test_binarize_small_region_removal_boundary():
    values = np.zeros((10, 10, 10))
    values[1:4, 1:4, 1:4] = 0.9  # 27 voxels: kept
    values[6:8, 6:8, 6:8] = 0.9  # 8 voxels: removed
    out = binarize(vol(values), min_region_voxels=27)
    assert out.values[2, 2, 2]
    assert not out.values[6, 6, 6]
    assert out.count() == 27


def test_binarize_connectivity_matters():
    values = np.zeros((8, 8, 8))
    values[0:2, 0:2, 0:2] = 0.9
    values[2:5, 2:5, 2:5] = 0.9  # corner-touches the first block
    joined = binarize(vol(values), min_region_voxels=30, connectivity=26)
    assert joined.count() == 8 + 27  # one 35-voxel component survives
    split = binarize(vol(values), min_region_voxels=30, connectivity=6)
    assert split.count() == 0  # 8 and 27 both fall below 30


def test_binarize_validates_threshold():
    with pytest.raises(ValueError):
        binarize(vol(np.zeros((2, 2, 2))), threshold=0.0)
    with pytest.raises(ValueError):
        binarize(vol(np.zeros((2, 2, 2))), threshold=1.0)


def test_eval_loss_perfect_prediction():
    truth_values = np.zeros((4, 4, 4), dtype=bool)
    truth_values[1:3, 1:3, 1:3] = True
    pred = vol(truth_values.astype(np.float64))
    loss = eval_loss(pred, LabelVolume(truth_values))
    # cross-entropy ~0 after clipping; overlap term is exactly -1
    assert loss == pytest.approx(-1.0, abs=1e-4)


def test_eval_loss_uniform_half_closed_form():
    dims = (4, 4, 4)
    n = int(np.prod(dims))
    truth_values = np.zeros(dims, dtype=bool)
    truth_values[:2] = True  # half positive
    pred = vol(np.full(dims, 0.5))
    loss = eval_loss(pred, LabelVolume(truth_values))
    ce = n * np.log(0.5)
    dice = 2 * (0.5 * n / 2) / (0.5 * n + n / 2)
    assert loss == pytest.approx(ce - dice, rel=1e-12)


def test_eval_loss_empty_truth_near_zero_dice_term():
    dims = (4, 4, 4)
    pred = vol(np.zeros(dims))  # clipped to epsilon internally
    loss = eval_loss(pred, LabelVolume(np.zeros(dims, dtype=bool)))
    assert loss == pytest.approx(0.0, abs=1e-4)
