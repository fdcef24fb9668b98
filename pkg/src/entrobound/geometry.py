"""Hyperrectangles, uniform grid partitions and trajectory-space bookkeeping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    """Axis-aligned hyperrectangle ``[lows[0], highs[0]] x ... x [lows[n-1], highs[n-1]]``."""

    lows: np.ndarray
    highs: np.ndarray

    def __post_init__(self):
        lows = np.atleast_1d(np.asarray(self.lows, dtype=float))
        highs = np.atleast_1d(np.asarray(self.highs, dtype=float))
        if lows.ndim != 1 or lows.shape != highs.shape:
            raise GeometryError(
                f"lows and highs must be 1-D of equal length, got {lows.shape} and {highs.shape}")
        if lows.size == 0:
            raise GeometryError("box needs at least one dimension")
        if not np.all(highs > lows):
            raise GeometryError("box must have nonzero volume (highs > lows)")
        lows.setflags(write=False)
        highs.setflags(write=False)
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @classmethod
    def unit(cls, dim: int = 1) -> "Box":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lows.size

    @property
    def widths(self) -> np.ndarray:
        return self.highs - self.lows

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.widths)))

    def contains(self, x, atol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lows - atol) & (x <= self.highs + atol), axis=-1)

    def to_dict(self) -> dict:
        return {"lows": self.lows.tolist(), "highs": self.highs.tolist()}


@dataclass(frozen=True)
class GridPartition:
    """Tensor-product grid of a :class:`Box`.

    Cells are numbered in row-major (C) order over the per-dimension
    indices, so the last dimension varies fastest.  Cells are half-open
    ``[lo, hi)`` except on the top face of the box, which is closed.
    """

    box: Box
    counts: tuple
    edges: tuple = field(init=False, repr=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if len(counts) != self.box.dim:
            raise GeometryError(
                f"counts has {len(counts)} entries but the box is {self.box.dim}-dimensional")
        if any(c < 1 for c in counts):
            raise GeometryError("every dimension needs at least one subdivision")
        object.__setattr__(self, "counts", counts)
        edges = []
        for lo, hi, c in zip(self.box.lows, self.box.highs, counts):
            e = np.linspace(lo, hi, c + 1)
            e[-1] = hi
            e.setflags(write=False)
            edges.append(e)
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.counts))

    def __len__(self):
        return self.cell_count

    def multi_index(self, i) -> tuple:
        return np.unravel_index(i, self.counts)

    def flat_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(tuple(multi), self.counts)

    def cell_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(lows, highs)`` arrays of shape ``(cell_count, dim)``."""
        idx = np.indices(self.counts).reshape(self.dim, -1)
        lows = np.stack([self.edges[d][idx[d]] for d in range(self.dim)], axis=1)
        highs = np.stack([self.edges[d][idx[d] + 1] for d in range(self.dim)], axis=1)
        return lows, highs

    def cell_box(self, i: int) -> Box:
        multi = self.multi_index(i)
        lows = [self.edges[d][multi[d]] for d in range(self.dim)]
        highs = [self.edges[d][multi[d] + 1] for d in range(self.dim)]
        return Box(np.array(lows), np.array(highs))

    def cell_sides(self) -> np.ndarray:
        lows, highs = self.cell_bounds()
        return highs - lows

    def cell_volumes(self) -> np.ndarray:
        return np.prod(self.cell_sides(), axis=1)

    def log_cell_volumes(self) -> np.ndarray:
        return np.sum(np.log(self.cell_sides()), axis=1)

    def centers(self) -> np.ndarray:
        lows, highs = self.cell_bounds()
        return 0.5 * (lows + highs)

    @property
    def max_side(self) -> float:
        return float(max(np.max(np.diff(e)) for e in self.edges))

    def cell_of(self, x) -> np.ndarray | int:
        return cell_of(self, x)

    def to_dict(self) -> dict:
        return {"box": self.box.to_dict(), "counts": list(self.counts)}


def build_uniform_grid(box: Box, counts) -> GridPartition:
    """Split each dimension of ``box`` into ``counts[j]`` equal pieces."""
    counts = np.atleast_1d(counts)
    if counts.size == 1 and box.dim > 1:
        raise GeometryError(
            f"counts has 1 entry but the box is {box.dim}-dimensional; pass one count per dimension")
    return GridPartition(box, tuple(int(c) for c in counts))


def cell_of(partition: GridPartition, x):
    """Index of the cell containing ``x``.

    Accepts a single point of shape ``(dim,)`` (returns an int) or a batch of
    shape ``(M, dim)`` (returns an int array).  Points on an interior edge go
    to the upper cell; points on the top face go to the last cell.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[-1] != partition.dim:
        raise GeometryError(f"point dimension {pts.shape[-1]} != partition dimension {partition.dim}")
    inside = partition.box.contains(pts)
    if not np.all(inside):
        bad = pts[~inside][0]
        raise GeometryError(f"point {bad.tolist()} lies outside the box")
    multi = []
    for d in range(partition.dim):
        j = np.searchsorted(partition.edges[d], pts[:, d], side="right") - 1
        multi.append(np.clip(j, 0, partition.counts[d] - 1))
    flat = np.ravel_multi_index(tuple(multi), partition.counts)
    return int(flat[0]) if single else flat


@dataclass(frozen=True)
class TrajectoryMeasures:
    """Sizes of the trajectory space induced by a grid and a horizon.

    ``cell_count`` is an exact Python integer; ``representable`` tells whether
    it fits a signed 64-bit integer.  Downstream code only ever uses
    ``log_cell_count``.
    """

    cell_count: int
    log_cell_count: float
    representable: bool
    volume: float
    log_volume: float
    max_side: float
    dim: int


def trajectory_space_measures(partition: GridPartition, K: int) -> TrajectoryMeasures:
    if K < 1:
        raise GeometryError("horizon K must be at least 1")
    n_cells = partition.cell_count
    count = n_cells ** (K + 1)
    log_count = (K + 1) * math.log(n_cells)
    log_vol = (K + 1) * partition.box.log_volume
    vol = math.exp(log_vol) if log_vol < 700 else math.inf
    return TrajectoryMeasures(
        cell_count=count,
        log_cell_count=log_count,
        representable=count < 2**63,
        volume=vol,
        log_volume=log_vol,
        max_side=partition.max_side,
        dim=(K + 1) * partition.dim,
    )
