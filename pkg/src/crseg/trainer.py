"""Adam training loop with the teacher-forcing curriculum."""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .assignment import sequence_loss
from .config import InferenceConfig, TrainConfig
from .decoder import DecodeTrace, Network, decode_sequence, reference_masks
from .errors import ShapeError, TrainingError
from .rand_metrics import adapted_rand_error
from .segmenter import infer_volume
from .voxel_store import LabelMap, Volume, read_volume

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "step", "loss", "val_ari", "wallclock_s")


@dataclass
class Sample:
    frames: np.ndarray      # (N, H, W)
    reference: np.ndarray   # (H, W) label slice at the first frame
    truth: np.ndarray       # (M, N, H, W) masks of the reference objects
    active: np.ndarray      # (M,) bool


@dataclass
class TrainResult:
    network: Network
    steps: int = 0
    epochs_run: int = 0
    history: list = field(default_factory=list)        # metric rows
    mask_sources: list = field(default_factory=list)   # (epoch, source) per decoded batch
    checkpoints: list = field(default_factory=list)


def make_sample(frames, labels, m_cap: int) -> Sample:
    frames = np.asarray(frames, dtype=np.float32)
    labels = np.asarray(labels)
    ref, ids = reference_masks(labels[0], m_cap)
    truth = np.zeros((m_cap,) + labels.shape, dtype=np.float32)
    for o, i in enumerate(ids[0]):
        truth[o] = labels == i
    active = np.zeros(m_cap, bool)
    active[: len(ids[0])] = True
    return Sample(frames, labels[0].copy(), truth, active)


def _load_pair(entry):
    if isinstance(entry, (tuple, list)) and len(entry) == 2 and not isinstance(entry[0], str):
        v, l = entry
    else:
        v, l = read_volume(entry["volume"]), read_volume(entry["labels"])
    v = v if isinstance(v, Volume) else Volume(v)
    l = l if isinstance(l, LabelMap) else LabelMap(l)
    if v.shape != l.shape:
        raise ShapeError(f"volume {v.shape} and labels {l.shape} differ")
    return v, l


def split_volumes(cfg: TrainConfig):
    """Training and validation (volume, labels) pairs.

    Without explicit validation volumes the last ``val_fraction`` of every
    training volume along z is held out as one contiguous block.
    """
    train, val = [], []
    for entry in cfg.train_volumes:
        v, l = _load_pair(entry)
        if cfg.val_volumes or cfg.val_fraction == 0:
            train.append((v, l))
            continue
        z = v.shape[0]
        cut = max(1, int(math.floor(z * (1.0 - cfg.val_fraction))))
        train.append((Volume(v.data[:cut]), LabelMap(l.data[:cut])))
        if cut < z:
            val.append((Volume(v.data[cut:]), LabelMap(l.data[cut:])))
    val += [_load_pair(e) for e in cfg.val_volumes]
    return train, val


def make_samples(pairs, cfg: TrainConfig) -> list:
    n = cfg.model.sequence_length
    stride = cfg.sequence_stride or n
    samples = []
    for v, l in pairs:
        z = v.shape[0]
        starts = range(0, z - n + 1, stride) if z >= n else [0]
        for s in starts:
            e = min(s + n, z)
            if not np.any(l.data[s]):
                continue
            samples.append(make_sample(v.data[s:e], l.data[s:e], cfg.model.objects_per_sequence))
    return samples


def batch_loss(net: Network, batch: list, teacher_forced: bool, trace=None):
    frames = np.stack([s.frames for s in batch])
    truth = np.stack([s.truth for s in batch])
    active = np.stack([s.active for s in batch])
    ref = truth[:, :, 0]
    out = decode_sequence(net, frames, ref, teacher=truth if teacher_forced else None,
                          active=active, trace=trace)
    gt = torch.as_tensor(truth, dtype=net.dtype)
    losses = [sequence_loss(out[b], gt[b][torch.as_tensor(batch[b].active)])[0]
              for b in range(len(batch))]
    return torch.stack(losses).mean()


def validate(net, pairs, infer_cfg: Optional[InferenceConfig] = None) -> list:
    """Adapted Rand error per validation volume, seeded with its first labeled slice."""
    if not isinstance(net, Network):
        net = Network.load(net)
    infer_cfg = infer_cfg or InferenceConfig(chunk_length=max(2, net.cfg.sequence_length))
    out = []
    for v, l in pairs:
        pred = infer_volume(v, LabelMap(l.data[0]), net, infer_cfg)
        out.append(adapted_rand_error(pred.data, l.data))
    return out


def _dump_batch(path, batch):
    np.savez(path, frames=np.stack([s.frames for s in batch]),
             truth=np.stack([s.truth for s in batch]))


def train(cfg: TrainConfig, samples: Optional[list] = None, val_pairs: Optional[list] = None,
          callback: Optional[Callable] = None, network: Optional[Network] = None) -> TrainResult:
    """Run the curriculum: ground-truth previous masks for the first
    ``teacher_forced_epochs`` epochs, the model's own masks afterwards.

    ``callback(result, epoch, step, loss)`` runs after every optimizer step;
    returning True stops training.
    """
    torch.manual_seed(cfg.seed)
    if samples is None:
        train_pairs, pairs = split_volumes(cfg)
        samples = make_samples(train_pairs, cfg)
        val_pairs = pairs if val_pairs is None else val_pairs
    val_pairs = val_pairs or []
    if not samples:
        raise TrainingError("no training sequences")
    net = network or Network(cfg.model, seed=cfg.seed)
    opt = torch.optim.Adam(net.params.parameters(), lr=cfg.learning_rate,
                           betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    os.makedirs(cfg.out_dir, exist_ok=True)
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    with open(metrics_path, "w", newline="") as fh:
        csv.writer(fh).writerow(METRIC_COLUMNS)

    result = TrainResult(net)
    t0 = time.time()
    stop = False
    for epoch in range(1, cfg.epochs + 1):
        teacher = epoch <= cfg.teacher_forced_epochs
        order = rng.permutation(len(samples))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = [samples[j] for j in order[i:i + cfg.batch_size]]
            if len({s.frames.shape for s in batch}) != 1:
                raise TrainingError("sequences in one batch must share a shape")
            trace = DecodeTrace()
            loss = batch_loss(net, batch, teacher, trace)
            fwd_sources = {src for sweep, t, src in trace.mask_sources if sweep == "fwd" and t > 0}
            result.mask_sources.append((epoch, fwd_sources.pop() if len(fwd_sources) == 1 else "reference"))
            if not torch.isfinite(loss):
                dump = os.path.join(cfg.out_dir, f"nan_batch_epoch{epoch}_step{result.steps}.npz")
                _dump_batch(dump, batch)
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {result.steps}; batch saved to {dump}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(net.params.parameters(), cfg.grad_clip)
            opt.step()
            result.steps += 1
            losses.append(loss.item())
            if callback is not None and callback(result, epoch, result.steps, losses[-1]):
                stop = True
            if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                stop = True
            if stop:
                break

        val_ari = ""
        if val_pairs and cfg.validate_every and epoch % cfg.validate_every == 0:
            val_ari = float(np.mean(validate(net, val_pairs)))
        row = {"epoch": epoch, "step": result.steps, "loss": float(np.mean(losses)),
               "val_ari": val_ari, "wallclock_s": round(time.time() - t0, 3)}
        result.history.append(row)
        with open(metrics_path, "a", newline="") as fh:
            csv.writer(fh).writerow([row[c] for c in METRIC_COLUMNS])
        log.info("epoch %d step %d loss %.4f val_ari %s", epoch, result.steps, row["loss"], val_ari)
        if cfg.checkpoint_every and (epoch % cfg.checkpoint_every == 0 or stop or epoch == cfg.epochs):
            path = os.path.join(cfg.out_dir, f"epoch_{epoch:04d}.ckpt")
            net.save(path)
            result.checkpoints.append(path)
        result.epochs_run = epoch
        if stop:
            break
    net.save(os.path.join(cfg.out_dir, "last.ckpt"))
    return result
