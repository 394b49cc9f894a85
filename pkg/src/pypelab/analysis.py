"""Attention aggregation metrics and heatmap export.

Anchors are detected with a simple proxy: a visual key counts as an anchor
when its mean received attention exceeds ``threshold_multiple`` times the
uniform share.  It is a stand-in for a qualitative notion, not a
calibrated detector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .layout import SequenceLayout

__all__ = [
    "AnchorMetrics",
    "topk_mass",
    "attention_entropy",
    "anchor_count",
    "render_heatmap",
    "read_pgm",
    "heatmap_pixels",
    "visual_key_distribution",
    "layer_report",
    "metrics_to_csv",
    "metrics_from_csv",
    "CSV_HEADER",
    "DEFAULT_K",
    "DEFAULT_THRESHOLD",
]

CSV_HEADER = "layer,topk_mass,entropy,anchor_count"
DEFAULT_K = 5
DEFAULT_THRESHOLD = 5.0


@dataclass(frozen=True)
class AnchorMetrics:
    layer: int
    topk_mass: float
    entropy: float
    anchor_count: int


def topk_mass(dist, k: int) -> float:
    p = np.asarray(dist, dtype=np.float64).reshape(-1)
    if not 1 <= k <= p.size:
        raise ValueError(f"k must be in [1, {p.size}], got {k}")
    return float(np.sort(p)[::-1][:k].sum())


def attention_entropy(dist) -> float:
    p = np.asarray(dist, dtype=np.float64).reshape(-1)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def anchor_count(column_means, threshold_multiple: float = DEFAULT_THRESHOLD) -> int:
    c = np.asarray(column_means, dtype=np.float64).reshape(-1)
    if c.size == 0:
        return 0
    return int((c > threshold_multiple / c.size).sum())


def heatmap_pixels(matrix) -> np.ndarray:
    """Gray levels ``floor(255 * v / max + 0.5)``; an all-zero map stays black."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"heatmap needs a 2D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("heatmap entries must be finite")
    top = m.max()
    if top <= 0:
        return np.zeros(m.shape, dtype=np.int64)
    return np.floor(255.0 * m / top + 0.5).astype(np.int64)


def render_heatmap(matrix, path) -> Path:
    """Write ``matrix`` as a plain-text (P2) PGM image."""
    px = heatmap_pixels(matrix)
    H, W = px.shape
    lines = ["P2", f"{W} {H}", "255"] + [" ".join(str(v) for v in row) for row in px]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_pgm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a P2 PGM file")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    body = [int(t) for t in tokens[4:]]
    if len(body) != W * H or any(v < 0 or v > maxval for v in body):
        raise ValueError(f"{path}: malformed pixel data")
    return np.array(body, dtype=np.int64).reshape(H, W)


def visual_key_distribution(probs: np.ndarray, layout: SequenceLayout) -> np.ndarray:
    """Mean attention each visual key receives, normalized over visual keys.

    Queries are the instruction tokens when there are any, otherwise the
    visual tokens.  Each query row is first renormalized over the visual
    columns so that every query contributes equally.
    """
    queries = layout.instruction_slice if layout.instruction_len else layout.visual_slice
    sub = np.asarray(probs, dtype=np.float64)[queries, layout.visual_slice]
    totals = sub.sum(axis=1, keepdims=True)
    sub = sub[totals[:, 0] > 0] / totals[totals[:, 0] > 0]
    if sub.size == 0:
        raise ValueError("no query attends to any visual key")
    return sub.mean(axis=0)


def layer_report(
    records, layout: SequenceLayout, k: int = DEFAULT_K, threshold_multiple: float = DEFAULT_THRESHOLD
) -> list[AnchorMetrics]:
    """Anchor metrics per layer on head-averaged attention over visual keys.

    ``k`` is clipped to the number of visual tokens.
    """
    if not records:
        raise ValueError("no attention records")
    by_layer: dict[int, list[np.ndarray]] = {}
    for rec in records:
        by_layer.setdefault(rec.layer, []).append(rec.probs)
    out = []
    for layer in sorted(by_layer):
        dist = visual_key_distribution(np.mean(by_layer[layer], axis=0), layout)
        out.append(
            AnchorMetrics(
                layer=layer,
                topk_mass=topk_mass(dist, min(k, dist.size)),
                entropy=attention_entropy(dist),
                anchor_count=anchor_count(dist, threshold_multiple),
            )
        )
    return out


def metrics_to_csv(metrics: Sequence[AnchorMetrics]) -> str:
    rows = [CSV_HEADER]
    for m in metrics:
        rows.append(f"{m.layer},{m.topk_mass:.6f},{m.entropy:.6f},{m.anchor_count}")
    return "\n".join(rows) + "\n"


def metrics_from_csv(text: str) -> list[AnchorMetrics]:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0].strip() != CSV_HEADER:
        raise ValueError(f"metrics CSV must start with header {CSV_HEADER!r}")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        out.append(AnchorMetrics(int(parts[0]), float(parts[1]), float(parts[2]), int(parts[3])))
    return out
