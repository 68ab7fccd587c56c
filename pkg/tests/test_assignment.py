import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from crseg.assignment import (assignment_cost, brute_force_assignment, hungarian, sequence_loss,
                              siou)
from crseg.errors import ShapeError

from conftest import check_grads


def t(x):
    return torch.tensor(x, dtype=torch.float64)


def test_siou_examples():
    g = t([1.0, 0.0, 1.0, 1.0])
    assert siou(g, g).item() == 0.0
    assert siou(t([1.0, 0.0]), t([0.0, 1.0])).item() == 1.0
    assert siou(t([0.5, 0.5]), t([1.0, 0.0])).item() == pytest.approx(2 / 3, abs=1e-15)
    assert siou(t([0.0, 0.0]), t([0.0, 0.0])).item() == 0.0
    assert siou(t([0.3, 0.0]), t([0.0, 0.0])).item() == 1.0
    with pytest.raises(ShapeError):
        siou(t([1.0]), t([1.0, 0.0]))


def test_siou_gradient():
    r = torch.Generator().manual_seed(0)
    m = torch.rand(3, 4, 4, generator=r, dtype=torch.float64).requires_grad_(True)
    g = (torch.rand(3, 4, 4, generator=r, dtype=torch.float64) > 0.5).double()
    check_grads(lambda: siou(m, g), [m], tol=1e-5)


def test_hungarian_examples():
    assert hungarian([[3.0]]) == [0]
    assert hungarian([[1, 2], [2, 1]]) == [0, 1]
    assert assignment_cost([[1, 2], [2, 1]], [0, 1]) == 2
    perm = hungarian([[0.9, 0.1], [0.2, 0.8]])
    assert perm == [1, 0]
    assert assignment_cost([[0.9, 0.1], [0.2, 0.8]], perm) == pytest.approx(0.3)
    with pytest.raises(ShapeError):
        hungarian(np.zeros((2, 3)))


def test_hungarian_tie_break_is_lexicographic():
    assert hungarian(np.zeros((4, 4))) == [0, 1, 2, 3]
    c = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1]], float)  # optimum 0 only via anti-diagonal
    assert hungarian(c) == [2, 1, 0]
    c = np.array([[0, 0, 5], [0, 0, 5], [5, 5, 0]], float)
    assert hungarian(c) == [0, 1, 2]


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**32 - 1), integer=st.booleans())
def test_hungarian_matches_exhaustive(n, seed, integer):
    r = np.random.default_rng(seed)
    c = r.integers(0, 4, size=(n, n)).astype(float) if integer else r.random((n, n))
    best, first = brute_force_assignment(c)
    perm = hungarian(c)
    assert assignment_cost(c, perm) == best
    assert perm == first


def _tubes(seed, m=3, n=2, hw=4):
    r = np.random.default_rng(seed)
    gt = (r.random((m, n, hw, hw)) > 0.6).astype(float)
    pred = np.clip(gt + r.normal(0, 0.3, gt.shape), 0.01, 0.99)
    return torch.tensor(pred), torch.tensor(gt)


def test_sequence_loss_examples():
    _, gt = _tubes(0)
    loss, perm = sequence_loss(gt.clone(), gt)
    assert loss.item() == 0.0 and perm == [0, 1, 2]
    swapped = gt[[1, 0, 2]]
    loss, perm = sequence_loss(swapped, gt)
    assert loss.item() == 0.0 and perm == [1, 0, 2]
    with pytest.raises(ShapeError):
        sequence_loss(gt[:, :1], gt)


def test_sequence_loss_equals_permutation_minimum():
    for seed in range(10):
        pred, gt = _tubes(seed)
        loss, _ = sequence_loss(pred, gt)
        best = min(np.mean([siou(pred[i], gt[p[i]]).item() for i in range(3)])
                   for p in itertools.permutations(range(3)))
        assert loss.item() == pytest.approx(best, abs=1e-12)
        assert 0.0 <= loss.item() <= 1.0


def test_sequence_loss_pads_ground_truth():
    pred, gt = _tubes(3)
    loss, perm = sequence_loss(pred, gt[:2])
    assert sorted(perm) == [0, 1, 2]
    with pytest.raises(ShapeError):
        sequence_loss(pred[:2], gt)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_sequence_loss_invariant_to_slot_order(seed):
    pred, gt = _tubes(seed)
    perm = np.random.default_rng(seed).permutation(3)
    a, _ = sequence_loss(pred, gt)
    b, _ = sequence_loss(pred[perm], gt)
    assert a.item() == pytest.approx(b.item(), abs=1e-12)


def test_sequence_loss_gradient():
    pred, gt = _tubes(5)
    pred.requires_grad_(True)
    check_grads(lambda: sequence_loss(pred, gt)[0], [pred], tol=1e-5)
