"""Hierarchical CConvLSTM decoder producing M soft masks per frame.

Levels run from the deepest (k = 0, stride 16) to the finest; a 1x1 conv
plus logistic on the finest fused state gives the full-resolution mask.
Parameters are shared across objects and frames.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .cconvlstm import (StateBank, add_cconvlstm_params, build_input, cell_params,
                        directional_step, fuse, prime_reference)
from .config import ModelConfig, has_backward, has_reference
from .encoder import add_encoder_params, encode, project
from .errors import SeedError, ShapeError, StateError
from .primitives import ParamStore, conv2d, init_scale, read_checkpoint, save_checkpoint


@dataclass
class DecodeTrace:
    """Instrumentation hooks filled in by :func:`decode_sequence`."""

    mask_sources: list = field(default_factory=list)      # (sweep, t, "truth" | "inferred" | "reference")
    first_spatial_zero: list = field(default_factory=list)  # (sweep, t, k, bool)
    reference: Optional[dict] = None        # copies of the states right after priming
    reference_final: Optional[dict] = None  # the bank's states after the last frame


class Network:
    """Encoder, decoder and mask head parameters plus their configuration."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=torch.float32):
        self.cfg = cfg
        self.params = ParamStore(seed=seed, dtype=dtype)
        add_encoder_params(self.params, cfg)
        add_cconvlstm_params(self.params, cfg)
        c = cfg.hidden_width
        self.params.add("dec.head.w", (1, c, 1, 1), init_scale(c, 1))
        self.params.add("dec.head.b", (1,))

    @property
    def dtype(self):
        return self.params.dtype

    def save(self, path):
        from .config import to_dict
        save_checkpoint(path, self.params, {"model": to_dict(self.cfg)})

    @classmethod
    def load(cls, path, mode: Optional[str] = None):
        values, config = read_checkpoint(path)
        model = dict(config.get("model", {}))
        if mode is not None and mode != model.get("consistency_mode", mode):
            raise StateError(f"checkpoint was trained as {model.get('consistency_mode')}, not {mode}")
        net = cls(ModelConfig(**model))
        net.params.load_values(values)
        return net

    def mask_head(self, h):
        return torch.sigmoid(conv2d(h, self.params["dec.head.w"], self.params["dec.head.b"]))

    def pyramid(self, frames: torch.Tensor, estimate: torch.Tensor) -> list:
        """Projected pyramids for (B, N, H, W) frames; level k is (B, N, C, h, w)."""
        b, n, hgt, wid = frames.shape
        x = torch.stack([frames, estimate.expand_as(frames)], dim=2).reshape(b * n, 2, hgt, wid)
        if self.cfg.in_channels != 2:
            x = torch.cat([x[:, :1]] * (self.cfg.in_channels - 1) + [x[:, 1:]], dim=1)
        proj = project(encode(x.to(self.dtype), self.params, self.cfg), self.params, self.cfg)
        return [p.reshape(b, n, *p.shape[1:]) for p in proj]


def decode_object_frame(net: Network, proj_t: list, o: int, t: int, bank: StateBank,
                        prev_mask: torch.Tensor, sweep: str = "fwd", final: bool = True,
                        trace: Optional[DecodeTrace] = None):
    """Chain all levels for object ``o`` at frame ``t`` in one sweep direction.

    ``proj_t`` is the projected pyramid of frame t (each (B, C, h, w)) and
    ``prev_mask`` is (B, 1, H, W). In the forward sweep of a bidirectional
    mode with ``final=False`` the fuse sees a zero backward map (provisional
    prediction); the backward sweep fuses with the stored forward state.
    Returns the (B, 1, H, W) soft mask; ``bank`` is updated in place.
    """
    cfg = net.cfg
    mode = cfg.consistency_mode
    if has_reference(mode) and not bank.primed:
        raise StateError("state bank has no reference states; prime it first")
    h_below = None
    for k in range(cfg.levels):
        f = proj_t[k]
        s = cfg.strides[k]
        x = build_input(h_below, f, prev_mask[..., ::s, ::s])
        spatial = bank.spatial_state(sweep, k, f)
        if trace is not None and o == 0:
            trace.first_spatial_zero.append((sweep, t, k, not bool(spatial.h.any())))
        state = directional_step(x, spatial, bank.temporal_state(sweep, k, o, f),
                                 cell_params(net.params, k, sweep))
        bank.spatial[(sweep, k)] = state.h
        bank.temporal[(sweep, k, o)] = state
        h_ref = bank.reference.get((k, o)) if has_reference(mode) else None
        if sweep == "fwd":
            bank.forward_out[(k, o)] = state.h
            h_bwd = None
            if has_backward(mode):
                if final:
                    raise StateError(f"mode {mode} finalizes in the backward sweep")
                h_bwd = torch.zeros_like(state.h)
            h_below = fuse(state.h, h_bwd, h_ref, net.params, k, mode)
        else:
            h_fwd = bank.forward_out.get((t, k, o))
            if h_fwd is None:
                raise StateError(f"no forward state for frame {t}, object {o}")
            h_below = fuse(h_fwd, state.h, h_ref, net.params, k, mode)
    return net.mask_head(h_below)


def reference_masks(ref_labels: np.ndarray, m_cap: int):
    """One-hot (B, M, H, W) masks and the id list per sequence, ascending ids.

    Sequences with fewer ids get empty padded slots; ids beyond ``m_cap`` are
    dropped (caller warns).
    """
    ref_labels = np.asarray(ref_labels)
    if ref_labels.ndim == 2:
        ref_labels = ref_labels[None]
    out = np.zeros((ref_labels.shape[0], m_cap) + ref_labels.shape[1:], dtype=np.float32)
    ids = []
    for b, lab in enumerate(ref_labels):
        u = np.unique(lab)
        u = [int(i) for i in u[u != 0]]
        if not u:
            raise SeedError("reference label map has no object")
        u = u[:m_cap]
        for o, i in enumerate(u):
            out[b, o] = lab == i
        ids.append(u)
    return out, ids


def decode_sequence(net: Network, frames, ref_masks, estimate=None, teacher=None,
                    active=None, trace: Optional[DecodeTrace] = None) -> torch.Tensor:
    """Propagate the reference masks through ``frames``.

    Args:
        frames: (B, N, H, W) intensities; frame 0 is the reference frame.
        ref_masks: (B, M, H, W) one-hot reference masks, M = object slots.
        estimate: (B, H, W) initial-estimate channel; defaults to the union
            of the reference masks.
        teacher: optional (B, M, N, H, W) ground-truth masks fed back as the
            previous-frame mask instead of the model's own predictions.
        active: (B, M) bool, slots holding a real object; inactive slots
            output all-zero masks.

    Returns the (B, M, N, H, W) soft masks.
    """
    cfg = net.cfg
    mode = cfg.consistency_mode
    dt = net.dtype
    frames = torch.as_tensor(frames, dtype=dt)
    ref_masks = torch.as_tensor(ref_masks, dtype=dt)
    if frames.dim() != 4 or ref_masks.dim() != 4 or frames.shape[0] != ref_masks.shape[0]:
        raise ShapeError("frames must be (B, N, H, W) and ref_masks (B, M, H, W)")
    if frames.shape[-2:] != ref_masks.shape[-2:]:
        raise ShapeError("frames and reference masks differ in resolution")
    b, n = frames.shape[:2]
    m = ref_masks.shape[1]
    if active is None:
        active = ref_masks.flatten(2).sum(-1) > 0
    active = torch.as_tensor(active, dtype=torch.bool)
    if not bool(active.any(dim=1).all()):
        raise SeedError("every sequence needs at least one labeled object")
    if estimate is None:
        estimate = ref_masks.sum(1).clamp(max=1.0)
    estimate = torch.as_tensor(estimate, dtype=dt)[:, None]
    if teacher is not None:
        teacher = torch.as_tensor(teacher, dtype=dt)
    keep = active.to(dt)[:, :, None, None]

    proj = net.pyramid(frames, estimate)
    frame_proj = [[level[:, t] for level in proj] for t in range(n)]

    bank = StateBank()
    if has_reference(mode):
        bank.reference = prime_reference(frame_proj[0], ref_masks, net.params, net.cfg, active)
        bank.primed = True
        if trace is not None:
            trace.reference = {k: v.detach().clone() for k, v in bank.reference.items()}

    bidir = has_backward(mode)
    fwd_masks = [[None] * m for _ in range(n)]
    stored_fwd = {}
    for t in range(n):
        bank.start_frame()
        if t == 0:
            source = "reference"
        else:
            source = "truth" if teacher is not None else "inferred"
        if trace is not None:
            trace.mask_sources.append(("fwd", t, source))
        for o in range(m):
            if t == 0:
                prev = ref_masks[:, o:o + 1]
            elif teacher is not None:
                prev = teacher[:, o, t - 1:t]
            else:
                prev = fwd_masks[t - 1][o]
            out = decode_object_frame(net, frame_proj[t], o, t, bank, prev, "fwd", final=not bidir,
                                      trace=trace)
            fwd_masks[t][o] = out * keep[:, o:o + 1]
        for (k, o), h in bank.forward_out.items():
            stored_fwd[(t, k, o)] = h
        bank.forward_out.clear()

    if trace is not None:
        trace.reference_final = bank.reference
    if not bidir:
        return torch.stack([torch.cat(row, dim=1) for row in fwd_masks], dim=2)

    bank.forward_out = stored_fwd
    final = [[None] * m for _ in range(n)]
    for t in reversed(range(n)):
        bank.start_frame()
        nxt = min(t + 1, n - 1)
        if trace is not None:
            trace.mask_sources.append(("bwd", t, "truth" if teacher is not None else "inferred"))
        for o in range(m):
            prev = teacher[:, o, nxt:nxt + 1] if teacher is not None else fwd_masks[nxt][o]
            out = decode_object_frame(net, frame_proj[t], o, t, bank, prev, "bwd", trace=trace)
            final[t][o] = out * keep[:, o:o + 1]
    return torch.stack([torch.cat(row, dim=1) for row in final], dim=2)
