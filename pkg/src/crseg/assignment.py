"""Tube-level soft-IoU loss under an optimal one-to-one object matching."""
from __future__ import annotations

import itertools

import numpy as np
import torch

from .errors import ShapeError


def siou(m: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """1 - sum(m g) / sum(m + g - m g); 0 when both tubes are empty."""
    if m.shape != g.shape:
        raise ShapeError(f"tube shapes differ: {tuple(m.shape)} vs {tuple(g.shape)}")
    m = m.reshape(-1)
    g = g.reshape(-1).to(m.dtype)
    inter = (m * g).sum()
    union = (m + g - m * g).sum()
    if union.item() == 0.0:
        return (m * 0).sum()
    return 1.0 - inter / union


def _solve(cost: np.ndarray):
    """Shortest augmenting path assignment with dual potentials, O(n^3).

    Returns ``col_of_row`` for a square cost matrix.
    """
    n = cost.shape[0]
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    row_of_col = [0] * (n + 1)  # 1-based; 0 = free
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            delta, j1 = inf, 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[row_of_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = [0] * n
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


def _min_cost(cost: np.ndarray) -> float:
    if cost.shape[0] == 0:
        return 0.0
    cols = _solve(cost)
    return float(sum(cost[i, c] for i, c in enumerate(cols)))


def hungarian(cost) -> list:
    """Minimum-cost permutation ``perm`` (row i -> column perm[i]).

    Among optimal permutations the lexicographically smallest is returned:
    rows are fixed in order, each to the lowest column that still admits an
    optimal completion.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError(f"cost matrix must be square, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ShapeError("cost matrix has non-finite entries")
    n = c.shape[0]
    if n == 0:
        return []
    best = _min_cost(c)
    tol = 1e-9 * max(1.0, float(np.abs(c).max())) * n
    rows = list(range(n))
    free = list(range(n))
    perm, fixed = [], 0.0
    for i in rows:
        rest = rows[i + 1:]
        for j in free:
            others = [k for k in free if k != j]
            sub = c[np.ix_(rest, others)]
            if fixed + c[i, j] + _min_cost(sub) <= best + tol:
                perm.append(j)
                fixed += c[i, j]
                free = others
                break
    return perm


def brute_force_assignment(cost):
    """Exhaustive oracle: (min total cost, lexicographically first argmin)."""
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    best, arg = float("inf"), None
    for perm in itertools.permutations(range(n)):
        total = float(sum(c[i, perm[i]] for i in range(n)))
        if total < best:
            best, arg = total, list(perm)
    return best, arg


def assignment_cost(cost, perm) -> float:
    c = np.asarray(cost, dtype=np.float64)
    return float(sum(c[i, perm[i]] for i in range(len(perm))))


def cost_matrix(pred: torch.Tensor, gt: torch.Tensor) -> np.ndarray:
    """sIoU between every predicted tube (rows) and gt tube (columns)."""
    with torch.no_grad():
        p = pred.reshape(pred.shape[0], -1).double()
        g = gt.reshape(gt.shape[0], -1).double()
        inter = p @ g.T
        union = p.sum(1)[:, None] + g.sum(1)[None, :] - inter
        safe = torch.where(union == 0, torch.ones_like(union), union)
        cost = torch.where(union == 0, torch.zeros_like(union), 1.0 - inter / safe)
    return cost.clamp(0.0, 1.0).numpy()


def pad_objects(gt: torch.Tensor, m: int) -> torch.Tensor:
    if gt.shape[0] > m:
        raise ShapeError(f"{gt.shape[0]} ground-truth tubes exceed {m} predicted slots")
    if gt.shape[0] == m:
        return gt
    pad = gt.new_zeros((m - gt.shape[0],) + tuple(gt.shape[1:]))
    return torch.cat([gt, pad], dim=0)


def sequence_loss(pred: torch.Tensor, gt: torch.Tensor):
    """Mean matched sIoU between ``pred`` (M, N, H, W) and ``gt`` (M_g, N, H, W).

    The matching is computed without gradient; the loss differentiates only
    through the matched pairs. Returns ``(loss, perm)`` where ``perm[i]`` is
    the gt tube assigned to predicted slot ``i``.
    """
    if pred.dim() < 2 or gt.dim() != pred.dim():
        raise ShapeError("pred and gt must both be (objects, frames, ...) tensors")
    if pred.shape[1:] != gt.shape[1:]:
        raise ShapeError(f"frame/pixel shape mismatch {tuple(pred.shape[1:])} vs {tuple(gt.shape[1:])}")
    gt = pad_objects(gt.to(pred.dtype), pred.shape[0])
    perm = hungarian(cost_matrix(pred, gt))
    terms = [siou(pred[i], gt[j]) for i, j in enumerate(perm)]
    return torch.stack(terms).mean(), perm
