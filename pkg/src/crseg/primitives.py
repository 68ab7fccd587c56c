"""Differentiable building blocks and the named parameter store.

Gradients come from torch autograd; every function here is a thin, shape
checked wrapper so the finite-difference suite can address each one.
Maps are (C, H, W) or batched (B, C, H, W).
"""
from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import FormatError, ShapeError, StorageError

GATES = ("i", "f", "o", "g")


def _batched(x: torch.Tensor):
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ShapeError(f"expected (C,H,W) or (B,C,H,W), got {tuple(x.shape)}")


_CHANNELS_LAST_MIN = 64


def conv2d(x, w, b=None, stride: int = 1):
    """Zero-padded ("same" at stride 1) cross-correlation plus bias."""
    xb, squeeze = _batched(x)
    if w.dim() != 4 or w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ShapeError(f"kernel must be (C_out, C_in, k, k) with odd k, got {tuple(w.shape)}")
    if xb.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernel expects {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {tuple(b.shape)} does not match {w.shape[0]} outputs")
    if xb.shape[-1] >= _CHANNELS_LAST_MIN:
        # oneDNN is markedly faster on NHWC for the large maps
        xb = xb.contiguous(memory_format=torch.channels_last)
        w = w.contiguous(memory_format=torch.channels_last)
    y = F.conv2d(xb, w, b, stride=stride, padding=(w.shape[2] // 2, w.shape[3] // 2))
    return y[0] if squeeze else y


def bilinear_upsample2x(x):
    """Double H and W; output index i samples input coordinate (i + 0.5)/2 - 0.5, clamped."""
    xb, squeeze = _batched(x)
    y = F.interpolate(xb, scale_factor=2, mode="bilinear", align_corners=False)
    return y[0] if squeeze else y


def nearest_downsample2x(x):
    """Top-left sample of every 2x2 block."""
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ShapeError(f"spatial dims {tuple(x.shape[-2:])} must be even")
    return x[..., ::2, ::2]


def downsample_to(x, factor: int):
    """Repeated :func:`nearest_downsample2x` by a power-of-two ``factor``."""
    while factor > 1:
        x = nearest_downsample2x(x)
        factor //= 2
    return x


class ConvLSTMParams(NamedTuple):
    """Gate kernels stacked along the output axis in (i, f, o, g) order.

    wx: (4*C_out, C_in, k, k); wh: (4*C_out, C_hid, k, k); b: (4*C_out,)
    """

    wx: torch.Tensor
    wh: torch.Tensor
    b: torch.Tensor

    @property
    def hidden(self) -> int:
        return self.wx.shape[0] // 4

    def gate(self, name: str):
        k = GATES.index(name)
        c = self.hidden
        return self.wx[k * c:(k + 1) * c], self.wh[k * c:(k + 1) * c], self.b[k * c:(k + 1) * c]


def lstm_gates(pre, c_prev):
    """Gate nonlinearities and state update from stacked pre-activations."""
    i, f, o, g = torch.chunk(pre, 4, dim=-3)
    i, f, o = torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o)
    c = f * c_prev + i * torch.tanh(g)
    return o * torch.tanh(c), c


def convlstm_cell(x, h_prev, c_prev, p: ConvLSTMParams):
    """One ConvLSTM update without peephole terms; returns ``(h, c)``."""
    if p.wx.shape[0] % 4 or p.wh.shape[0] != p.wx.shape[0]:
        raise ShapeError("ConvLSTM kernels must stack four gates")
    if c_prev.shape[-3] != p.hidden or h_prev.shape[-2:] != x.shape[-2:]:
        raise ShapeError("state shapes do not match the cell")
    if c_prev.shape[-2:] != x.shape[-2:]:
        raise ShapeError("cell memory must match the input resolution")
    pre = conv2d(x, p.wx, p.b) + conv2d(h_prev, p.wh)
    return lstm_gates(pre, c_prev)


def init_scale(c_in: int, k: int) -> float:
    return float(np.sqrt(1.0 / (c_in * k * k)))


class ParamStore:
    """Ordered name -> tensor map; each tensor's ``.grad`` is its gradient slot."""

    def __init__(self, seed: int = 0, dtype=torch.float32):
        self._params: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        self._rng = np.random.Generator(np.random.Philox(seed))
        self.dtype = dtype

    def add(self, name, shape, scale=None, fill=0.0):
        """Register a parameter: uniform in [-scale, scale], or constant ``fill``."""
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        if scale is None:
            values = np.full(shape, fill)
        else:
            values = self._rng.uniform(-scale, scale, size=shape)
        t = torch.tensor(values, dtype=self.dtype).requires_grad_(True)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> torch.Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def parameters(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def to(self, dtype) -> "ParamStore":
        """Cast every parameter in place (fresh leaves, gradients dropped)."""
        for k, t in self._params.items():
            self._params[k] = t.detach().to(dtype).requires_grad_(True)
        self.dtype = dtype
        return self

    def snapshot(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.detach().cpu().numpy().copy()) for k, t in self._params.items())

    def load_values(self, values: dict):
        for k, t in self._params.items():
            if k not in values:
                raise FormatError(f"checkpoint lacks parameter {k!r}")
            v = np.asarray(values[k])
            if v.shape != tuple(t.shape):
                raise FormatError(f"{k}: checkpoint shape {v.shape} vs model {tuple(t.shape)}")
            with torch.no_grad():
                t.copy_(torch.as_tensor(v, dtype=t.dtype))


# Checkpoint layout: b"CKP1", uint32 entry count, then per entry
# uint32 name length, utf-8 name, uint32 ndim, uint64 dims, float32 LE values.
_CKPT_MAGIC = b"CKP1"


def save_checkpoint(path, params: ParamStore, config: dict | None = None) -> None:
    """Atomically write the binary checkpoint and its ``<path>.json`` manifest."""
    path = os.fspath(path)
    chunks = [_CKPT_MAGIC, struct.pack("<I", len(params))]
    manifest = {"parameters": [], "config": config or {}}
    for name, t in params.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
        manifest["parameters"].append({"name": name, "shape": list(arr.shape)})
    try:
        for target, payload, mode in ((path, b"".join(chunks), "wb"),
                                      (path + ".json", json.dumps(manifest, indent=1, sort_keys=True), "w")):
            tmp = target + ".tmp"
            with open(tmp, mode) as fh:
                fh.write(payload)
            os.replace(tmp, target)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path):
    """Return ``(OrderedDict name -> float32 array, config dict)``."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
        config = {}
        if os.path.exists(path + ".json"):
            with open(path + ".json") as fh:
                config = json.load(fh).get("config", {})
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    try:
        (count,) = struct.unpack_from("<I", raw, 4)
        pos = 8
        values = OrderedDict()
        for _ in range(count):
            (ln,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + ln].decode("utf-8")
            pos += ln
            (nd,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{nd}Q", raw, pos)
            pos += 8 * nd
            size = int(np.prod(shape)) * 4
            if pos + size > len(raw):
                raise FormatError(f"{path}: truncated entry {name!r}")
            values[name] = np.frombuffer(raw[pos:pos + size], dtype="<f4").reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    return values, config
