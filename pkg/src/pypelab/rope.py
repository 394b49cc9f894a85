"""Rotary position embedding in float64.

Components are paired as (0, 1), (2, 3), ... and pair ``d`` rotates by
``m * base ** (-2 d / D)``, so the first pair turns at unit frequency.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RotaryConfig", "rotary_frequencies", "rotate", "attention_score", "attention_row", "masked_softmax"]


@dataclass(frozen=True)
class RotaryConfig:
    dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise ValueError(f"rotary dim must be a positive even integer, got {self.dim}")
        if not self.base > 1:
            raise ValueError(f"rotary base must exceed 1, got {self.base}")


def rotary_frequencies(config: RotaryConfig) -> np.ndarray:
    d = np.arange(config.dim // 2, dtype=np.float64)
    return config.base ** (-2.0 * d / config.dim)


def rotate(v, m, config: RotaryConfig) -> np.ndarray:
    """Rotate ``v`` (shape ``(..., D)``) to position ``m``.

    ``m`` may be a scalar or an array broadcastable against ``v.shape[:-1]``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] % 2:
        raise ValueError(f"vector length must be even, got {v.shape[-1]}")
    if v.shape[-1] != config.dim:
        raise ValueError(f"vector length {v.shape[-1]} does not match rotary dim {config.dim}")
    angles = np.asarray(m, dtype=np.float64)[..., None] * rotary_frequencies(config)
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = v[..., 0::2], v[..., 1::2]
    out = np.empty(np.broadcast_shapes(v.shape, angles.shape[:-1] + (config.dim,)))
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def attention_score(q, k, m: int, n: int, config: RotaryConfig) -> float:
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != (config.dim,) or k.shape != (config.dim,):
        raise ValueError(f"q and k must have length {config.dim}, got {q.shape} and {k.shape}")
    return float(rotate(q, m, config) @ rotate(k, n, config))


def masked_softmax(scores: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``allowed``; masked entries are exactly 0."""
    allowed = np.asarray(allowed, dtype=bool)
    if not allowed.any(axis=-1).all():
        raise ValueError("attention row has no unmasked key")
    shifted = np.where(allowed, scores, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    weights = np.where(allowed, np.exp(shifted), 0.0)
    return weights / weights.sum(axis=-1, keepdims=True)


def attention_row(q, keys, q_pos: int, key_positions, mask_row, config: RotaryConfig, scale: float) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.float64)
    key_positions = np.asarray(key_positions)
    mask_row = np.asarray(mask_row, dtype=bool)
    if keys.ndim != 2 or not (len(keys) == len(key_positions) == len(mask_row)):
        raise ValueError("keys, key_positions and mask_row must agree in length")
    rq = rotate(q, q_pos, config)
    rk = rotate(keys, key_positions, config)
    return masked_softmax(scale * (rk @ rq), mask_row)
