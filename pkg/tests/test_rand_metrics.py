import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crseg.errors import MetricError, ShapeError
from crseg.rand_metrics import adapted_rand_error, pair_counting_oracle, rand_precision_recall


def test_identical_maps():
    gt = np.array([[1, 1, 2], [2, 3, 0]])
    assert adapted_rand_error(gt, gt) == 0.0
    assert pair_counting_oracle(gt, gt) == 0.0


def test_merge_example_one_third():
    gt = np.array([1, 1, 2, 2])
    pred = np.array([7, 7, 7, 7])
    assert rand_precision_recall(pred, gt) == (0.5, 1.0)
    assert adapted_rand_error(pred, gt) == pytest.approx(1 / 3, abs=1e-15)
    assert pair_counting_oracle(pred, gt) == pytest.approx(1 / 3, abs=1e-15)


def test_split_example_one_third():
    gt = np.array([4, 4, 4, 4])
    pred = np.array([1, 1, 2, 2])
    assert rand_precision_recall(pred, gt) == (1.0, 0.5)
    assert adapted_rand_error(pred, gt) == pytest.approx(1 / 3, abs=1e-15)
    assert pair_counting_oracle(pred, gt) == pytest.approx(1 / 3, abs=1e-15)


def test_background_gt_ignored_and_pred_zero_is_singletons():
    gt = np.array([0, 0, 1, 1])
    assert adapted_rand_error(np.array([5, 6, 1, 1]), gt) == 0.0
    # unlabeled prediction splits the segment into singletons
    err = adapted_rand_error(np.array([0, 0, 0, 0]), gt)
    assert err == pytest.approx(1 - 2 * 1 * 0.5 / 1.5)
    assert pair_counting_oracle(np.array([0, 0, 0, 0]), gt) == pytest.approx(err, abs=1e-12)


def test_errors():
    with pytest.raises(MetricError):
        adapted_rand_error(np.ones(3), np.zeros(3))
    with pytest.raises(ShapeError):
        adapted_rand_error(np.ones(3), np.ones(4))
    with pytest.raises(MetricError):
        pair_counting_oracle(np.ones(10_001), np.ones(10_001))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 5))
def test_oracle_agreement_and_invariances(seed, k):
    r = np.random.default_rng(seed)
    gt = r.integers(0, k + 1, size=(4, 4, 2))
    gt.flat[0] = 1
    pred = r.integers(0, k + 1, size=(4, 4, 2))
    err = adapted_rand_error(pred, gt)
    assert abs(err - pair_counting_oracle(pred, gt)) < 1e-10
    assert 0.0 <= err <= 1.0
    # relabel both maps with a permutation of non-zero ids
    perm = np.concatenate([[0], r.permutation(np.arange(1, k + 1)) + 10])
    assert abs(adapted_rand_error(perm[pred], perm[gt]) - err) < 1e-12


def test_zero_iff_identical_partition():
    gt = np.array([1, 1, 2, 2, 3])
    assert adapted_rand_error(np.array([9, 9, 4, 4, 8]), gt) == 0.0
    assert adapted_rand_error(np.array([9, 9, 4, 4, 4]), gt) > 0.0
