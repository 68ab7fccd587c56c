"""Consistent ConvLSTM: bidirectional local recurrence plus reference skip.

Each level k holds one ConvLSTM per temporal direction. A directional
step sees the current input, the hidden state of the previous object in
the same frame (spatial) and of the same object in the previous frame
(temporal); cell memory travels along the temporal axis only. ``fuse``
merges the directional outputs with the frozen reference-frame state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch

from .config import ModelConfig, check_mode, has_backward, has_reference
from .errors import ModeError, ShapeError
from .primitives import (ConvLSTMParams, ParamStore, bilinear_upsample2x, conv2d, convlstm_cell,
                         init_scale)

DIRECTIONS = ("fwd", "bwd")


@dataclass
class DirectionalState:
    h: torch.Tensor
    c: torch.Tensor

    @classmethod
    def zeros(cls, like: torch.Tensor):
        return cls(torch.zeros_like(like), torch.zeros_like(like))


def fuse_inputs(mode: str) -> int:
    return 1 + has_backward(mode) + has_reference(mode)


def input_channels(cfg: ModelConfig, k: int) -> int:
    return (cfg.hidden_width if k > 0 else 0) + cfg.hidden_width + 1


def add_cconvlstm_params(store: ParamStore, cfg: ModelConfig) -> None:
    c = cfg.hidden_width
    dirs = DIRECTIONS if has_backward(cfg.consistency_mode) else DIRECTIONS[:1]
    for k in range(cfg.levels):
        c_in = input_channels(cfg, k)
        for d in dirs:
            store.add(f"dec.L{k}.{d}.wx", (4 * c, c_in, 3, 3), init_scale(c_in, 3))
            store.add(f"dec.L{k}.{d}.wh", (4 * c, 2 * c, 3, 3), init_scale(2 * c, 3))
            b = store.add(f"dec.L{k}.{d}.b", (4 * c,))
            with torch.no_grad():
                b[c:2 * c] = 1.0  # forget gate starts open
        n = fuse_inputs(cfg.consistency_mode) * c
        store.add(f"dec.L{k}.fuse.w", (c, n, 3, 3), init_scale(n, 3))
        store.add(f"dec.L{k}.fuse.b", (c,))


def cell_params(params: ParamStore, k: int, direction: str) -> ConvLSTMParams:
    return ConvLSTMParams(params[f"dec.L{k}.{direction}.wx"], params[f"dec.L{k}.{direction}.wh"],
                          params[f"dec.L{k}.{direction}.b"])


def build_input(h_below: Optional[torch.Tensor], f_proj: torch.Tensor, prev_mask: torch.Tensor):
    """[upsampled h_below | f_proj | prev_mask] along channels.

    ``prev_mask`` must already be at the level resolution.
    """
    parts = []
    if h_below is not None:
        up = bilinear_upsample2x(h_below)
        if up.shape[-2:] != f_proj.shape[-2:]:
            raise ShapeError(f"upsampled state {tuple(up.shape[-2:])} vs features {tuple(f_proj.shape[-2:])}")
        parts.append(up)
    if prev_mask.shape[-2:] != f_proj.shape[-2:] or prev_mask.shape[-3] != 1:
        raise ShapeError(f"mask {tuple(prev_mask.shape)} does not match level {tuple(f_proj.shape)}")
    parts += [f_proj, prev_mask.to(f_proj.dtype)]
    return torch.cat(parts, dim=-3)


def directional_step(h_input, spatial: DirectionalState, temporal: DirectionalState,
                     p: ConvLSTMParams) -> DirectionalState:
    if spatial.h.shape != temporal.h.shape:
        raise ShapeError("spatial and temporal states differ in shape")
    h, c = convlstm_cell(h_input, torch.cat([spatial.h, temporal.h], dim=-3), temporal.c, p)
    return DirectionalState(h, c)


def fuse(h_fwd, h_bwd, h_ref, params: ParamStore, k: int, mode: str):
    """tanh(conv3x3([h_fwd | h_bwd | h_ref])) keeping only the maps ``mode`` enables."""
    check_mode(mode)
    maps = [h_fwd]
    if has_backward(mode):
        if h_bwd is None:
            raise ModeError(f"mode {mode} needs the backward state")
        maps.append(h_bwd)
    if has_reference(mode):
        if h_ref is None:
            raise ModeError(f"mode {mode} needs the reference state")
        maps.append(h_ref)
    shapes = {tuple(m.shape) for m in maps}
    if len(shapes) != 1:
        raise ShapeError(f"fuse inputs differ in shape: {sorted(shapes)}")
    return torch.tanh(conv2d(torch.cat(maps, dim=-3), params[f"dec.L{k}.fuse.w"],
                             params[f"dec.L{k}.fuse.b"]))


@dataclass
class StateBank:
    """Recurrent state of one (batch of) sequence decode.

    ``temporal[(dir, k, o)]`` is the state left by object o in the previous
    frame of that direction's sweep; ``spatial[(dir, k)]`` the hidden state
    of the previous object in the current frame; ``reference[(k, o)]`` the
    frozen reference-frame output; ``forward_out[(k, o)]`` the forward
    hidden state of the current frame, kept for the backward fuse.
    """

    temporal: dict = field(default_factory=dict)
    spatial: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    forward_out: dict = field(default_factory=dict)
    primed: bool = False

    def start_frame(self):
        self.spatial.clear()

    def spatial_state(self, direction, k, like) -> DirectionalState:
        h = self.spatial.get((direction, k))
        zero = torch.zeros_like(like)
        return DirectionalState(zero if h is None else h, zero)

    def temporal_state(self, direction, k, o, like) -> DirectionalState:
        s = self.temporal.get((direction, k, o))
        return DirectionalState.zeros(like) if s is None else s


def prime_reference(proj_ref: list, ref_masks: torch.Tensor, params: ParamStore, cfg: ModelConfig,
                    active: Optional[torch.Tensor] = None) -> dict:
    """Frozen reference states h_ref[(k, o)] from the labeled frame.

    ``proj_ref`` holds the projected pyramid of the reference frame (each
    (B, C, h, w)); ``ref_masks`` is (B, M, H, W) one-hot. The pass runs the
    full per-object decoder at the reference frame with zero temporal state
    and a zero reference input.
    """
    mode = cfg.consistency_mode
    m = ref_masks.shape[1]
    if active is None:
        active = ref_masks.flatten(2).sum(-1) > 0
    if not bool(active.any(dim=1).all()):
        from .errors import SeedError
        raise SeedError("reference frame has no labeled object")
    spatial = {}
    refs = {}
    for o in range(m):
        mask = ref_masks[:, o:o + 1]
        h_below = None
        for k in range(cfg.levels):
            f = proj_ref[k]
            x = build_input(h_below, f, mask[..., ::cfg.strides[k], ::cfg.strides[k]])
            zero = torch.zeros(f.shape, dtype=f.dtype)
            outs = {}
            for d in (DIRECTIONS if has_backward(mode) else DIRECTIONS[:1]):
                sp = spatial.get((d, k), zero)
                st = directional_step(x, DirectionalState(sp, zero), DirectionalState(zero, zero),
                                      cell_params(params, k, d))
                spatial[(d, k)] = st.h
                outs[d] = st.h
            h_below = fuse(outs["fwd"], outs.get("bwd"), zero, params, k, mode)
            refs[(k, o)] = h_below
    return refs
