"""Adapted Rand error, restricted to ground-truth foreground.

Normative convention: the contingency form with ``p_ij = n_ij / n``, i.e.
pair counts over all *ordered* voxel pairs including self-pairs. Predicted
id 0 is not a segment: every such voxel counts as its own singleton, which
is how the SNEMI3D evaluation script scores unlabeled predictions.
"""
from __future__ import annotations

import numpy as np

from .errors import MetricError, ShapeError

ORACLE_MAX_VOXELS = 10_000


def _foreground(pred, gt):
    pred = np.asarray(getattr(pred, "data", pred))
    gt = np.asarray(getattr(gt, "data", gt))
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    fg = gt != 0
    if not fg.any():
        raise MetricError("ground truth has no foreground; adapted Rand error undefined")
    return pred[fg].astype(np.int64), gt[fg].astype(np.int64)


def contingency(pred, gt):
    """Return (n_ij, s_i, t_j, n_unlabeled) as integer arrays over gt foreground.

    ``n_ij`` only covers predicted ids > 0; ``n_unlabeled`` is the number of
    foreground voxels predicted as 0.
    """
    p, g = _foreground(pred, gt)
    labeled = p != 0
    _, t_j = np.unique(g, return_counts=True)
    pairs = np.stack([p[labeled], g[labeled]], axis=1)
    if len(pairs):
        _, n_ij = np.unique(pairs, axis=0, return_counts=True)
        _, s_i = np.unique(p[labeled], return_counts=True)
    else:
        n_ij = s_i = np.zeros(0, np.int64)
    return n_ij, s_i, t_j, int((~labeled).sum())


def _pair_sums(pred, gt):
    n_ij, s_i, t_j, singles = contingency(pred, gt)
    both = int((n_ij.astype(object) ** 2).sum()) + singles
    pred_pairs = int((s_i.astype(object) ** 2).sum()) + singles
    gt_pairs = int((t_j.astype(object) ** 2).sum())
    return both, pred_pairs, gt_pairs


def rand_precision_recall(pred, gt):
    both, pred_pairs, gt_pairs = _pair_sums(pred, gt)
    return both / pred_pairs, both / gt_pairs


def _error(both: int, pred_pairs: int, gt_pairs: int) -> float:
    # 1 - 2PR/(P+R) as one integer ratio, so the result is correctly rounded
    return (pred_pairs + gt_pairs - 2 * both) / (pred_pairs + gt_pairs)


def adapted_rand_error(pred, gt) -> float:
    return _error(*_pair_sums(pred, gt))


def pair_counting_oracle(pred, gt) -> float:
    """Brute-force adapted Rand error by explicit voxel-pair enumeration.

    Enumerates unordered pairs of distinct foreground voxels, then converts
    the counts to the ordered, self-inclusive convention: every distinct
    pair counts twice and each voxel contributes one self-pair agreeing in
    both partitions.
    """
    p, g = _foreground(pred, gt)
    n = len(g)
    if n > ORACLE_MAX_VOXELS:
        raise MetricError(f"oracle refuses {n} voxels (limit {ORACLE_MAX_VOXELS})")
    tp = fp = fn = 0
    for a in range(n - 1):
        same_g = g[a + 1:] == g[a]
        same_p = (p[a + 1:] == p[a]) & (p[a] != 0)
        tp += int(np.count_nonzero(same_g & same_p))
        fp += int(np.count_nonzero(~same_g & same_p))
        fn += int(np.count_nonzero(same_g & ~same_p))
    tp, fp, fn = 2 * tp + n, 2 * fp, 2 * fn
    return _error(tp, tp + fp, tp + fn)
