"""Brute-force reference implementations.

Nothing here imports from the fast-path modules except the scheme classes
and the grid container; the arithmetic is written out independently so a
bug in one path cannot hide in the other.
"""
from __future__ import annotations

import math

import numpy as np

from .grid import AllOne, Concentric, PositionGrid, PyramidDescent, RasterScan

__all__ = ["literal_loop", "grid_oracle", "rotary_matrix", "attention_oracle", "softmax_oracle"]


def literal_loop(H: int, W: int, p_max: int, fill: int = 1) -> list[list[int]]:
    """Overwrite loop read word for word: ``P[p:H-p, p:W-p] = p`` for p in 1..p_max.

    Cells never touched by the loop keep ``fill``.  Under this reading the
    border ring and ring 1 share index 1.
    """
    P = [[fill] * W for _ in range(H)]
    for p in range(1, p_max + 1):
        for i in range(H):
            for j in range(W):
                if p <= i < H - p and p <= j < W - p:
                    P[i][j] = p
    return P


def grid_oracle(scheme, H: int, W: int, p_max: int = 1) -> PositionGrid:
    """Reference grid built by per-cell scans.

    Ringed schemes start from all ones and run the overwrite loop with the
    border ring counted as ring 1, so the region ``[p, H-p) x [p, W-p)``
    receives ``p + 1`` for p = 1..p_max-1.  P_max is capped at
    ``max(1, min(H, W) // 2)``.
    """
    if H < 1 or W < 1:
        raise ValueError(f"grid dimensions must be positive, got {H}x{W}")
    if p_max < 1:
        raise ValueError(f"p_max must be >= 1, got {p_max}")
    if isinstance(scheme, RasterScan):
        rows, counter = [], 0
        for _ in range(H):
            row = []
            for _ in range(W):
                counter += 1
                row.append(counter)
            rows.append(row)
        return PositionGrid(np.array(rows))
    if isinstance(scheme, AllOne):
        return PositionGrid(np.array([[1] * W for _ in range(H)]))
    if not isinstance(scheme, (Concentric, PyramidDescent)):
        raise TypeError(f"unsupported scheme {scheme!r}")
    shorter = H if H < W else W
    cap = p_max if p_max < shorter // 2 else shorter // 2
    if cap < 1:
        cap = 1
    P = [[1] * W for _ in range(H)]
    for p in range(1, cap):
        for i in range(p, H - p):
            for j in range(p, W - p):
                P[i][j] = p + 1
    return PositionGrid(np.array(P))


def rotary_matrix(m: int, dim: int, base: float = 10000.0) -> np.ndarray:
    """Dense block-diagonal rotation for position ``m``."""
    if dim % 2:
        raise ValueError(f"dimension must be even, got {dim}")
    R = np.zeros((dim, dim))
    for d in range(dim // 2):
        theta = base ** (-(2.0 * d) / dim)
        c, s = math.cos(m * theta), math.sin(m * theta)
        R[2 * d, 2 * d] = c
        R[2 * d, 2 * d + 1] = -s
        R[2 * d + 1, 2 * d] = s
        R[2 * d + 1, 2 * d + 1] = c
    return R


def attention_oracle(q, k, m: int, n: int, base: float = 10000.0) -> float:
    """``(R_m q) . (R_n k)`` with materialized rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape or q.ndim != 1:
        raise ValueError(f"q and k must be 1D vectors of equal length, got {q.shape} and {k.shape}")
    rq = rotary_matrix(m, q.size, base) @ q
    rk = rotary_matrix(n, k.size, base) @ k
    total = 0.0
    for a, b in zip(rq, rk):
        total += a * b
    return total


def softmax_oracle(scores, allowed) -> list[float]:
    """exp-normalize over allowed entries, no stabilization tricks beyond a max shift."""
    kept = [s for s, ok in zip(scores, allowed) if ok]
    if not kept:
        raise ValueError("no allowed entries")
    top = max(kept)
    weights = [math.exp(s - top) if ok else 0.0 for s, ok in zip(scores, allowed)]
    z = sum(weights)
    return [w / z for w in weights]
