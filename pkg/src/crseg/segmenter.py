"""Volume-level inference: watershed seeding and z-chunk chaining."""
from __future__ import annotations

import warnings
from typing import Optional, Union

import numpy as np
import torch
from scipy import ndimage
from skimage.measure import label as connected_components
from skimage.morphology import h_minima
from skimage.segmentation import watershed

from .config import InferenceConfig
from .decoder import Network, decode_sequence, reference_masks
from .errors import CapacityWarning, ShapeError
from .voxel_store import LabelMap, Volume


def watershed2d(frame, sigma: float = 2.0, h: float = 0.05) -> np.ndarray:
    """Marker watershed of the smoothed inverted intensity.

    Markers are the regional minima surviving h-minima suppression, numbered
    in raster order of their first pixel. A relief without minima (flat
    frame) is one region.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ShapeError(f"watershed2d expects a 2D frame, got {frame.shape}")
    relief = ndimage.gaussian_filter(1.0 - frame, sigma=sigma, mode="nearest")
    seeds = h_minima(relief, h)
    markers = connected_components(seeds > 0, connectivity=2)
    if markers.max() == 0:
        return np.ones(frame.shape, dtype=np.uint32)
    return watershed(relief, markers).astype(np.uint32)


def masks_to_labels(masks, threshold: float = 0.5, ids=None, allowed=None) -> np.ndarray:
    """Per pixel: id of the most probable slot if its probability >= threshold.

    Ties go to the lowest slot index. ``allowed`` (bool per slot) removes
    slots from the competition.
    """
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim != 3:
        raise ShapeError(f"expected (M, H, W) masks, got {masks.shape}")
    m = masks.shape[0]
    ids = np.arange(1, m + 1) if ids is None else np.asarray(ids)
    if allowed is not None:
        masks = np.where(np.asarray(allowed, bool)[:, None, None], masks, -np.inf)
    best = np.argmax(masks, axis=0)
    top = np.take_along_axis(masks, best[None], axis=0)[0]
    return np.where(top >= threshold, ids[best], 0).astype(np.uint32)


def sequence_labels(masks, ids, seed_labels, threshold: float = 0.5) -> np.ndarray:
    """Label frames from (M, N, H, W) masks; frame 0 is the seed itself.

    A slot whose label support vanishes stays out of every later frame.
    Slots with id 0 (padding) never label anything.
    """
    masks = np.asarray(masks)
    m, n = masks.shape[:2]
    slot_ids = np.zeros(m, dtype=np.int64)
    slot_ids[: len(ids)] = ids
    alive = slot_ids > 0
    out = np.zeros((n,) + masks.shape[2:], dtype=np.uint32)
    out[0] = np.where(np.isin(seed_labels, slot_ids[alive]), seed_labels, 0)
    for t in range(1, n):
        out[t] = masks_to_labels(masks[:, t], threshold, slot_ids, alive)
        present = np.isin(slot_ids, np.unique(out[t]))
        alive &= present
    return out


def _cap_ids(seed: np.ndarray, m_cap: int):
    ids = [int(i) for i in np.unique(seed) if i != 0]
    if len(ids) > m_cap:
        warnings.warn(f"{len(ids)} seed regions exceed the {m_cap} object slots; "
                      f"ids {ids[m_cap:]} stay background", CapacityWarning, stacklevel=3)
    return ids[:m_cap]


def _discover(frame, seed: np.ndarray, next_id: int, capacity: int, min_area: int):
    regions = watershed2d(frame)
    seed = seed.copy()
    for r in np.unique(regions):
        free = (regions == r) & (seed == 0)
        if free.sum() < min_area:
            continue
        if capacity <= 0:
            warnings.warn("no free object slot for a discovered region", CapacityWarning, stacklevel=3)
            break
        seed[free] = next_id
        next_id += 1
        capacity -= 1
    return seed, next_id


def infer_volume(v: Union[Volume, np.ndarray], seed: Optional[Union[LabelMap, np.ndarray]],
                 net: Union[Network, str], cfg: Optional[InferenceConfig] = None,
                 trace: Optional[list] = None) -> LabelMap:
    """Segment ``v`` by chaining overlapping z-chunks from a seeded first frame.

    ``seed`` labels frame 0; without it the watershed of frame 0 is used.
    ``trace``, when a list, receives one dict per chunk with its start,
    end, seed labels and ids.
    """
    if not isinstance(net, Network):
        net = Network.load(net)
    cfg = cfg or InferenceConfig(chunk_length=net.cfg.sequence_length)
    data = np.asarray(getattr(v, "data", v), dtype=np.float32)
    if data.ndim != 3:
        raise ShapeError("volume must be (z, y, x)")
    z = data.shape[0]
    if seed is None:
        seed_lab = watershed2d(data[0])
    else:
        seed_lab = np.asarray(getattr(seed, "data", seed))
        if seed_lab.ndim == 3:
            seed_lab = seed_lab[0]
    if seed_lab.shape != data.shape[1:]:
        raise ShapeError(f"seed {seed_lab.shape} does not match frame {data.shape[1:]}")
    m_cap = net.cfg.objects_per_sequence
    out = np.zeros(data.shape, dtype=np.uint32)
    next_id = int(seed_lab.max()) + 1
    start = 0
    while True:
        end = min(start + cfg.chunk_length, z)
        if cfg.discover_new_objects and start > 0:
            room = m_cap - len([i for i in np.unique(seed_lab) if i != 0])
            seed_lab, next_id = _discover(data[start], seed_lab, next_id, room, cfg.min_new_object_area)
        ids = _cap_ids(seed_lab, m_cap)
        chunk_seed = np.where(np.isin(seed_lab, ids), seed_lab, 0).astype(np.uint32)
        if trace is not None:
            trace.append({"start": start, "end": end, "seed": chunk_seed.copy(), "ids": list(ids)})
        if not ids:
            out[start:end] = 0
        else:
            ref, _ = reference_masks(chunk_seed, m_cap)
            estimate = (chunk_seed > 0).astype(np.float32)[None]
            with torch.no_grad():
                masks = decode_sequence(net, data[None, start:end], ref, estimate)[0].numpy()
            labels = sequence_labels(masks, ids, chunk_seed, cfg.binarize_threshold)
            keep_from = 0 if start == 0 else cfg.z_overlap
            out[start + keep_from:end] = labels[keep_from:]
        if end >= z:
            break
        start = end - cfg.z_overlap
        seed_lab = out[start].copy()
    return LabelMap(out)
