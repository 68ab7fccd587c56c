"""Ablation report parsing and deterministic SVG charts."""
from __future__ import annotations

import csv
import io
from collections import OrderedDict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import MODES, PAPER_ARI  # noqa: E402
from .errors import ParseError  # noqa: E402

REPORT_COLUMNS = ("mode", "seed", "ari", "inference_seconds")

_STYLE = {
    "svg.hashsalt": "crseg",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def read_report(path) -> list:
    """Rows of an ablation CSV; raises ParseError naming the line or column."""
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}: line 1: empty report") from None
    missing = [c for c in REPORT_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"{path}: line 1: missing column {missing[0]!r}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
        row = dict(zip(header, rec))
        try:
            row["seed"] = int(row["seed"])
            row["ari"] = float(row["ari"])
            row["inference_seconds"] = float(row["inference_seconds"])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from None
        if row["mode"] not in MODES:
            raise ParseError(f"{path}: line {lineno}: unknown mode {row['mode']!r}")
        rows.append(row)
    return rows


def write_report(path, rows: list, extra=("identity_kept",)) -> None:
    columns = list(REPORT_COLUMNS) + [c for c in extra if rows and c in rows[0]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def median_by_mode(rows: list) -> "OrderedDict[str, float]":
    out = OrderedDict()
    for mode in MODES:
        vals = [r["ari"] for r in rows if r["mode"] == mode]
        if vals:
            out[mode] = float(np.median(vals))
    return out


def ablation_chart(rows: list, path, paper_reference: bool = True) -> list:
    """Bar chart of median ARI per mode; published values drawn as markers.

    Returns the modes drawn, in bar order.
    """
    med = median_by_mode(rows)
    modes = list(med)
    x = np.arange(len(modes))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        bars = ax.bar(x, [med[m] for m in modes], width=0.6, color="#4c72b0", label="this run (median)")
        for b, m in zip(bars, modes):
            ax.annotate(f"{med[m]:.3f}", (b.get_x() + b.get_width() / 2, b.get_height()),
                        ha="center", va="bottom", fontsize=8)
        if paper_reference:
            ref = [PAPER_ARI[m] for m in modes]
            ax.scatter(x, ref, marker="_", s=400, color="#c44e52", zorder=3,
                       label="published (SNEMI3D)")
            for xi, r in zip(x, ref):
                ax.annotate(f"{r:.3f}", (xi + 0.32, r), va="center", fontsize=7, color="#c44e52")
        ax.set_xticks(x)
        ax.set_xticklabels(modes)
        ax.set_ylabel("adapted Rand error (lower is better)")
        ax.set_ylim(0, max([0.15] + [med[m] * 1.2 for m in modes]))
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return modes


def training_curve(history: list, path) -> None:
    """Loss (and validation error when present) per epoch."""
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.plot(epochs, [r["loss"] for r in history], color="#4c72b0", label="matched sIoU loss")
        val = [(r["epoch"], r["val_ari"]) for r in history if r["val_ari"] != ""]
        if val:
            ax.plot(*zip(*val), color="#dd8452", marker="o", ms=3, label="validation ARI")
        ax.set_xlabel("epoch")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
