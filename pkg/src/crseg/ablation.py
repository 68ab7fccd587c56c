"""Consistency-mode ablation on a synthetic benchmark with a blanked slice.

Every (mode, seed) cell trains a fresh network on its own synthetic
volumes and scores held-out volumes of the same kind. Besides the adapted
Rand error, each cell reports the fraction of objects whose predicted label
carries across the blank slice.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from typing import Callable, Optional

import numpy as np

from .config import AblationConfig, InferenceConfig, ModelConfig, TrainConfig
from .errors import CrsError, GenerationError
from .plotting import ablation_chart, write_report
from .rand_metrics import adapted_rand_error
from .segmenter import infer_volume
from .synth import SynthSpec, generate
from .trainer import make_samples, train

log = logging.getLogger(__name__)


def benchmark_volumes(acfg: AblationConfig, seed: int, count: int, offset: int) -> list:
    """``count`` synthetic (Volume, LabelMap) pairs, each with one blanked slice.

    Sub-seeds whose initial layout cannot be placed are skipped, so the set
    stays a pure function of (seed, offset, count).
    """
    base = SynthSpec.from_dict(acfg.synth)
    blank = blank_index(acfg, base.shape[0])
    pairs = []
    sub = offset
    while len(pairs) < count:
        if sub - offset >= 10 * count:
            raise GenerationError(f"too many unplaceable layouts for synth spec {acfg.synth}")
        spec = dataclasses.replace(base, seed=1000 * seed + sub, artifact_slices=(blank,))
        sub += 1
        try:
            pairs.append(generate(spec))
        except GenerationError:
            log.debug("skipping unplaceable synth seed %d", spec.seed)
    return pairs


def blank_index(acfg: AblationConfig, depth: int) -> int:
    return depth // 2 if acfg.blank_slice is None else int(acfg.blank_slice)


def identity_kept(pred: np.ndarray, gt: np.ndarray, blank: int, threshold: float = 0.5):
    """(kept, total) over objects present on both slices around ``blank``.

    An object is kept when the predicted label that covers it just before
    the blank (IoU >= threshold) covers it again just after. Which id that
    label is does not matter, only that it carries across.
    """
    before, after = blank - 1, blank + 1
    if before < 0 or after >= gt.shape[0]:
        return 0, 0

    def best(p_slice, g):
        ids, counts = np.unique(p_slice[g], return_counts=True)
        counts[ids == 0] = 0
        return ids[np.argmax(counts)] if counts.max() > 0 else 0

    def iou(p, g):
        return np.logical_and(p, g).sum() / np.logical_or(p, g).sum()

    kept = total = 0
    for oid in np.unique(gt[before]):
        if oid == 0 or not (gt[after] == oid).any():
            continue
        total += 1
        g0, g1 = gt[before] == oid, gt[after] == oid
        lab = best(pred[before], g0)
        if lab == 0 or iou(pred[before] == lab, g0) < threshold:
            continue
        kept += bool(iou(pred[after] == lab, g1) >= threshold)
    return kept, total


def run_cell(mode: str, seed: int, acfg: AblationConfig, model: ModelConfig, base: TrainConfig,
             infer_cfg: Optional[InferenceConfig], out_dir: str) -> dict:
    model = dataclasses.replace(model, consistency_mode=mode)
    train_pairs = benchmark_volumes(acfg, seed, acfg.train_volumes, 0)
    eval_pairs = benchmark_volumes(acfg, seed, acfg.eval_volumes, 500)
    probe = dataclasses.replace(base, model=model)
    samples = make_samples(train_pairs, probe)
    per_epoch = math.ceil(len(samples) / base.batch_size)
    epochs = max(base.teacher_forced_epochs, math.ceil(acfg.steps / per_epoch))
    cfg = dataclasses.replace(probe, seed=seed, epochs=epochs, max_steps=acfg.steps,
                              checkpoint_every=0, out_dir=os.path.join(out_dir, f"{mode}_seed{seed}"))
    net = train(cfg, samples=samples, val_pairs=[]).network

    infer_cfg = infer_cfg or InferenceConfig(chunk_length=max(2, model.sequence_length))
    aris, seconds, kept, total = [], 0.0, 0, 0
    for v, l in eval_pairs:
        t0 = time.perf_counter()
        pred = infer_volume(v, l.data[0], net, infer_cfg)
        seconds += time.perf_counter() - t0
        aris.append(adapted_rand_error(pred.data, l.data))
        k, n = identity_kept(pred.data, l.data, blank_index(acfg, v.shape[0]), acfg.identity_iou)
        kept += k
        total += n
    return {"mode": mode, "seed": seed, "ari": float(np.mean(aris)),
            "inference_seconds": float(seconds),
            "identity_kept": float(kept / total) if total else float("nan")}


def run_ablation(acfg: AblationConfig, model: ModelConfig, base: TrainConfig,
                 infer_cfg: Optional[InferenceConfig] = None, out_dir: str = "ablation",
                 progress: Optional[Callable] = None) -> list:
    """One report row per (mode, seed), seeds outermost."""
    rows = []
    for seed in acfg.seeds:
        for mode in acfg.modes:
            try:
                row = run_cell(mode, seed, acfg, model, base, infer_cfg, out_dir)
            except CrsError as exc:
                raise type(exc)(f"[mode={mode} seed={seed}] {exc}") from exc
            log.info("ablation %s seed %d: ari %.4f identity %.2f", mode, seed, row["ari"],
                     row["identity_kept"])
            if progress is not None:
                progress(row)
            rows.append(row)
    return rows


def write_outputs(rows: list, out_dir: str) -> tuple:
    """ablation.csv plus the median-ARI chart next to it."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "ablation.csv")
    svg_path = os.path.join(out_dir, "ablation.svg")
    write_report(csv_path, rows)
    ablation_chart(rows, svg_path)
    return csv_path, svg_path
