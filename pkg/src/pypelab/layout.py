"""Sequence layout: prefix text, one image, instruction text.

Visual tokens always sit in raster order in the sequence; only their
position indices change with the encoding scheme.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import PositionGrid

__all__ = [
    "SequenceLayout",
    "assign_positions",
    "build_mask",
    "validate_mask",
    "positions_to_csv",
    "positions_from_csv",
    "mask_to_csv",
    "mask_from_csv",
]


@dataclass(frozen=True)
class SequenceLayout:
    prefix_len: int
    grid: PositionGrid
    instruction_len: int

    def __post_init__(self):
        if self.prefix_len < 0 or self.instruction_len < 0:
            raise ValueError("segment lengths must be >= 0")

    @property
    def num_visual(self) -> int:
        return self.grid.height * self.grid.width

    @property
    def total_len(self) -> int:
        return self.prefix_len + self.num_visual + self.instruction_len

    @property
    def visual_slice(self) -> slice:
        return slice(self.prefix_len, self.prefix_len + self.num_visual)

    @property
    def instruction_slice(self) -> slice:
        return slice(self.prefix_len + self.num_visual, self.total_len)

    def with_grid(self, grid: PositionGrid) -> "SequenceLayout":
        if (grid.height, grid.width) != (self.grid.height, self.grid.width):
            raise ValueError("replacement grid must keep the same shape")
        return SequenceLayout(self.prefix_len, grid, self.instruction_len)


def assign_positions(layout: SequenceLayout, instruction_base: Optional[int] = None) -> np.ndarray:
    """Absolute position of every token in ``layout``.

    Prefix token k gets k, visual cell (i, j) gets ``prefix_len + grid[i, j] - 1``
    and instruction token k gets ``prefix_len + instruction_base + k``.
    ``instruction_base`` defaults to the grid's largest index, which puts
    the first instruction token one step past the innermost ring.  Passing a
    fixed value pins instruction positions across layers.
    """
    grid = layout.grid
    if instruction_base is None:
        instruction_base = grid.max_index
    elif instruction_base < grid.max_index:
        raise ValueError(
            f"instruction_base {instruction_base} would overlap visual positions (max index {grid.max_index})"
        )
    p = layout.prefix_len
    return np.concatenate(
        [
            np.arange(p, dtype=np.int64),
            p + grid.indices.reshape(-1) - 1,
            p + instruction_base + np.arange(layout.instruction_len, dtype=np.int64),
        ]
    )


def build_mask(layout: SequenceLayout, positions) -> np.ndarray:
    """Boolean (query, key) attention mask.

    Prefix and visual queries see every prefix/visual key whose position is
    not larger than their own, so tokens sharing an index see each other.
    Instruction queries see all prefix and visual keys plus instruction
    keys up to and including themselves.
    """
    pos = np.asarray(positions, dtype=np.int64)
    n = layout.total_len
    if pos.shape != (n,):
        raise ValueError(f"expected {n} positions, got shape {pos.shape}")
    mask = np.zeros((n, n), dtype=bool)
    ctx = layout.prefix_len + layout.num_visual
    mask[:ctx, :ctx] = pos[None, :ctx] <= pos[:ctx, None]
    mask[ctx:, :ctx] = True
    slots = np.arange(ctx, n)
    mask[ctx:, ctx:] = slots[None, :] <= slots[:, None]
    return mask


def validate_mask(mask, positions) -> bool:
    """Check a mask against its positions.

    Requires a square mask matching ``positions``, a true diagonal, no key
    at a later position than its query, and no key that is earlier both in
    the sequence and in position left masked.
    """
    try:
        m = np.asarray(mask, dtype=bool)
        pos = np.asarray(positions, dtype=np.int64).reshape(-1)
    except (TypeError, ValueError):
        return False
    n = pos.size
    if m.shape != (n, n):
        return False
    if not m.diagonal().all():
        return False
    later = pos[None, :] > pos[:, None]
    if (m & later).any():
        return False
    earlier = np.tril(np.ones((n, n), dtype=bool)) & ~later
    return bool(m[earlier].all())


def positions_to_csv(positions) -> str:
    return ",".join(str(int(p)) for p in positions) + "\n"


def positions_from_csv(text: str) -> np.ndarray:
    line = text.strip()
    if not line:
        return np.zeros(0, dtype=np.int64)
    return np.array([int(tok) for tok in line.split(",")], dtype=np.int64)


def mask_to_csv(mask) -> str:
    return "".join(",".join("1" if v else "0" for v in row) + "\n" for row in np.asarray(mask, dtype=bool))


def mask_from_csv(text: str) -> np.ndarray:
    rows = [line for line in text.splitlines() if line.strip()]
    return np.array([[tok == "1" for tok in line.split(",")] for line in rows], dtype=bool)
