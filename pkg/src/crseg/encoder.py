"""Strided-conv feature pyramid with five taps at strides 16, 8, 4, 2, 1."""
from __future__ import annotations

import torch

from .config import ModelConfig
from .errors import ShapeError
from .primitives import ParamStore, conv2d, init_scale


def add_encoder_params(store: ParamStore, cfg: ModelConfig) -> None:
    # build finest-first so each level consumes the one above it
    prev = cfg.in_channels
    for j, width in enumerate(reversed(cfg.widths)):
        store.add(f"enc.L{j}.conv1.w", (width, prev, 3, 3), init_scale(prev, 3))
        store.add(f"enc.L{j}.conv1.b", (width,))
        store.add(f"enc.L{j}.conv2.w", (width, width, 3, 3), init_scale(width, 3))
        store.add(f"enc.L{j}.conv2.b", (width,))
        prev = width
    for k, width in enumerate(cfg.widths):
        store.add(f"dec.L{k}.proj.w", (cfg.hidden_width, width, 1, 1), init_scale(width, 1))
        store.add(f"dec.L{k}.proj.b", (cfg.hidden_width,))


def encode(x: torch.Tensor, params: ParamStore, cfg: ModelConfig) -> list:
    """Pyramid for frames ``x`` of shape (B, C_in, H, W), deepest level first.

    Each level is two 3x3 convolutions with ReLU; the first convolution of
    every level below the input resolution has stride 2.
    """
    if x.dim() != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"encoder expects (B, {cfg.in_channels}, H, W), got {tuple(x.shape)}")
    top = 2 ** (cfg.levels - 1)
    if x.shape[2] % top or x.shape[3] % top:
        raise ShapeError(f"frame {tuple(x.shape[2:])} not divisible by {top}")
    taps = []
    h = x
    for j in range(cfg.levels):
        h = torch.relu(conv2d(h, params[f"enc.L{j}.conv1.w"], params[f"enc.L{j}.conv1.b"],
                              stride=1 if j == 0 else 2))
        h = torch.relu(conv2d(h, params[f"enc.L{j}.conv2.w"], params[f"enc.L{j}.conv2.b"]))
        taps.append(h)
    pyramid = taps[::-1]
    for k, (level, stride) in enumerate(zip(pyramid, cfg.strides)):
        assert level.shape[2] * stride == x.shape[2] and level.shape[3] * stride == x.shape[3], k
    return pyramid


def project(pyramid: list, params: ParamStore, cfg: ModelConfig) -> list:
    """1x1 convolution of every level down to the decoder width."""
    if len(pyramid) != cfg.levels:
        raise ShapeError(f"expected {cfg.levels} pyramid levels, got {len(pyramid)}")
    return [conv2d(f, params[f"dec.L{k}.proj.w"], params[f"dec.L{k}.proj.b"])
            for k, f in enumerate(pyramid)]
