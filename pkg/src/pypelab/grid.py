"""Visual position grids and the per-layer descent schedule.

A grid holds one positive integer per visual token.  Four schemes are
supported: raster-scan, concentric, all-one and pyramid-descent.  The
concentric and pyramid schemes index rings from the image border (1) toward
the center (``p_max``).
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

__all__ = [
    "RasterScan",
    "Concentric",
    "AllOne",
    "PyramidDescent",
    "EncodingScheme",
    "PositionGrid",
    "DescentSchedule",
    "ring_depth",
    "max_p_max",
    "build_grid",
    "build_schedule",
    "grid_for_layer",
    "parse_scheme",
]


@dataclass(frozen=True)
class RasterScan:
    name = "raster"


@dataclass(frozen=True)
class Concentric:
    name = "concentric"


@dataclass(frozen=True)
class AllOne:
    name = "allone"


@dataclass(frozen=True)
class PyramidDescent:
    descent_interval: int = 1
    name = "pyramid"

    def __post_init__(self):
        if int(self.descent_interval) != self.descent_interval or self.descent_interval < 1:
            raise ValueError(f"descent_interval must be a positive integer, got {self.descent_interval!r}")


EncodingScheme = Union[RasterScan, Concentric, AllOne, PyramidDescent]


def parse_scheme(name: str, interval: int = 1) -> EncodingScheme:
    """Build a scheme from its CLI name."""
    name = name.lower()
    if name == "raster":
        return RasterScan()
    if name == "concentric":
        return Concentric()
    if name == "allone":
        return AllOne()
    if name == "pyramid":
        return PyramidDescent(interval)
    raise ValueError(f"unknown scheme {name!r}")


def _is_ringed(scheme: EncodingScheme) -> bool:
    return isinstance(scheme, (Concentric, PyramidDescent))


@dataclass(frozen=True, eq=False)
class PositionGrid:
    """H x W matrix of 1-based position indices, one per visual token."""

    indices: np.ndarray

    def __post_init__(self):
        arr = np.array(self.indices, dtype=np.int64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"grid must be a non-empty 2D matrix, got shape {arr.shape}")
        if arr.min() < 1:
            raise ValueError("grid indices must be >= 1")
        arr.flags.writeable = False
        object.__setattr__(self, "indices", arr)

    @property
    def height(self) -> int:
        return self.indices.shape[0]

    @property
    def width(self) -> int:
        return self.indices.shape[1]

    @property
    def max_index(self) -> int:
        return int(self.indices.max())

    def __eq__(self, other):
        if not isinstance(other, PositionGrid):
            return NotImplemented
        return np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash((self.indices.shape, self.indices.tobytes()))

    def to_csv(self) -> str:
        return "".join(",".join(str(int(v)) for v in row) + "\n" for row in self.indices)

    @classmethod
    def from_csv(cls, text: str) -> "PositionGrid":
        rows = [line for line in text.splitlines() if line.strip()]
        return cls(np.array([[int(tok) for tok in line.split(",")] for line in rows], dtype=np.int64))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PositionGrid":
        return cls.from_csv(Path(path).read_text())


@dataclass(frozen=True)
class DescentSchedule:
    num_layers: int
    descent_interval: int
    initial_p_max: int
    per_layer_p_max: tuple = field(default_factory=tuple)

    def p_max_at(self, layer: int) -> int:
        """P_max in effect at ``layer`` (1-indexed)."""
        if not 1 <= layer <= self.num_layers:
            raise ValueError(f"layer must be in [1, {self.num_layers}], got {layer}")
        return self.per_layer_p_max[layer - 1]

    def trace(self) -> str:
        return ",".join(str(p) for p in self.per_layer_p_max)


def ring_depth(i: int, j: int, H: int, W: int) -> int:
    """Distance of cell (i, j) to the nearest border of an H x W grid."""
    if not (0 <= i < H and 0 <= j < W):
        raise ValueError(f"cell ({i}, {j}) outside {H}x{W} grid")
    return min(i, j, H - 1 - i, W - 1 - j)


def max_p_max(H: int, W: int) -> int:
    """Largest usable P_max for an H x W grid (never below 1)."""
    return max(1, min(H, W) // 2)


def build_grid(scheme: EncodingScheme, H: int, W: int, p_max: int = 1) -> PositionGrid:
    if H < 1 or W < 1:
        raise ValueError(f"grid dimensions must be positive, got {H}x{W}")
    if p_max < 1:
        raise ValueError(f"p_max must be >= 1, got {p_max}")
    if isinstance(scheme, RasterScan):
        return PositionGrid(np.arange(1, H * W + 1, dtype=np.int64).reshape(H, W))
    if isinstance(scheme, AllOne):
        return PositionGrid(np.ones((H, W), dtype=np.int64))
    if not _is_ringed(scheme):
        raise TypeError(f"unsupported scheme {scheme!r}")
    cap = min(p_max, max_p_max(H, W))
    out = np.empty((H, W), dtype=np.int64)
    for i in range(H):
        for j in range(W):
            out[i, j] = min(ring_depth(i, j, H, W) + 1, cap)
    return PositionGrid(out)


def build_schedule(num_layers: int, t: int, H: int, W: int | None = None) -> DescentSchedule:
    """Trace P_max across layers.

    P_max starts at ``H // 2`` (clamped to the shorter side when ``W`` is
    given).  At the start of layer ``i`` (1-indexed) it drops by one when
    ``i % t == 0`` and it is still above 1.
    """
    if num_layers < 1:
        raise ValueError(f"num_layers must be >= 1, got {num_layers}")
    if t < 1:
        raise ValueError(f"descent interval must be >= 1, got {t}")
    if H < 2:
        raise ValueError(f"height must be >= 2, got {H}")
    p_max = H // 2
    if W is not None:
        p_max = min(p_max, max_p_max(H, W))
    initial = p_max
    trace = []
    for i in range(1, num_layers + 1):
        if i % t == 0 and p_max > 1:
            p_max -= 1
        trace.append(p_max)
    return DescentSchedule(num_layers, t, initial, tuple(trace))


def grid_for_layer(
    scheme: EncodingScheme, H: int, W: int, schedule: DescentSchedule, layer: int
) -> PositionGrid:
    p_max = schedule.p_max_at(layer)
    if isinstance(scheme, Concentric):
        # static: the undescended grid at every layer
        p_max = schedule.initial_p_max
    return build_grid(scheme, H, W, p_max)
