"""Basis maps, sparse depth measurements and regression-system assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import (
    CoordinateError,
    DimensionError,
    DomainError,
    DuplicatePixelError,
    MeasurementError,
)

DEPTH_FLOOR = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class BasisMap:
    """Per-pixel feature field of shape ``(height, width, num_bases)``.

    Stored C-contiguous so the ``M`` channels of one pixel are adjacent and
    extracting a design-matrix row is a contiguous copy.
    """

    values: np.ndarray
    has_bias: bool = False

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise DimensionError(f"basis values must be (H, W, M), got shape {v.shape}")
        h, w, m = v.shape
        if h < 1 or w < 1 or m < 1:
            raise DimensionError(f"basis dimensions must be positive, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("basis values must be finite")
        if self.has_bias and not np.all(v[:, :, 0] == 1.0):
            raise DomainError("bias channel 0 must equal 1.0 at every pixel")
        if v is self.values:
            v = v.copy()
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def num_bases(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def rows(self) -> np.ndarray:
        """All pixels as an ``(H*W, M)`` matrix in row-major pixel order."""
        return self.values.reshape(-1, self.num_bases)

    def at(self, row: int, col: int) -> np.ndarray:
        return self.values[row, col]


@dataclass(frozen=True, eq=False)
class SparseDepthSet:
    """Sparse metric depth measurements at integer pixel coordinates.

    Entry order is preserved; it defines the row order of the assembled
    regression system.
    """

    rows: np.ndarray
    cols: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows)
        cols = np.asarray(self.cols)
        depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        rows = _as_index(rows, "row")
        cols = _as_index(cols, "col")
        if not (rows.shape == cols.shape == depths.shape):
            raise DimensionError("rows, cols and depths must have equal length")
        if np.any(rows < 0) or np.any(cols < 0):
            raise CoordinateError("pixel coordinates must be non-negative")
        bad = ~np.isfinite(depths) | (depths < DEPTH_FLOOR)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise MeasurementError(
                f"depth at ({rows[i]}, {cols[i]}) is {depths[i]!r}; must be finite and >= {DEPTH_FLOOR:g} m"
            )
        if rows.size:
            pairs = np.stack([rows, cols], axis=1)
            uniq, counts = np.unique(pairs, axis=0, return_counts=True)
            if np.any(counts > 1):
                r, c = uniq[np.argmax(counts > 1)]
                raise DuplicatePixelError(f"duplicate measurement at pixel ({r}, {c})")
        object.__setattr__(self, "rows", _frozen(rows.copy()))
        object.__setattr__(self, "cols", _frozen(cols.copy()))
        object.__setattr__(self, "depths", _frozen(depths.copy()))

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, int, float]]) -> "SparseDepthSet":
        entries = list(entries)
        if not entries:
            return cls.empty()
        rows, cols, depths = zip(*entries)
        return cls(np.array(rows), np.array(cols), np.array(depths, dtype=np.float64))

    @classmethod
    def empty(cls) -> "SparseDepthSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    def __len__(self) -> int:
        return int(self.depths.size)

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(r), int(c), float(d)) for r, c, d in zip(self.rows, self.cols, self.depths)]

    def check_bounds(self, height: int, width: int) -> None:
        oob = (self.rows >= height) | (self.cols >= width)
        if np.any(oob):
            i = int(np.flatnonzero(oob)[0])
            raise CoordinateError(
                f"pixel ({self.rows[i]}, {self.cols[i]}) outside {height}x{width} basis"
            )

    def subset(self, idx) -> "SparseDepthSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SparseDepthSet(self.rows[idx], self.cols[idx], self.depths[idx])


def _as_index(a: np.ndarray, name: str) -> np.ndarray:
    a = a.reshape(-1)
    if a.size == 0:
        return np.zeros(0, np.int64)
    if a.dtype.kind == "f":
        if not np.all(np.isfinite(a)) or np.any(a != np.round(a)):
            raise CoordinateError(f"{name} coordinates must be integers")
    elif a.dtype.kind not in "iu":
        raise CoordinateError(f"{name} coordinates must be integers")
    return a.astype(np.int64)


@dataclass(frozen=True, eq=False)
class RegressionSystem:
    """Design matrix ``design`` (N x M), log-depth ``targets`` and the pixel of each row."""

    design: np.ndarray
    targets: np.ndarray
    pixel_index: np.ndarray = field(default=None)

    def __post_init__(self):
        design = np.asarray(self.design, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if design.ndim != 2:
            raise DimensionError(f"design must be 2-D, got shape {design.shape}")
        if design.shape[0] != targets.size:
            raise DimensionError(f"design has {design.shape[0]} rows but {targets.size} targets")
        pix = self.pixel_index
        if pix is None:
            pix = np.full((targets.size, 2), -1, dtype=np.int64)
        pix = np.asarray(pix, dtype=np.int64).reshape(-1, 2)
        if pix.shape[0] != targets.size:
            raise DimensionError("pixel_index length must match targets")
        object.__setattr__(self, "design", _frozen(design.copy()))
        object.__setattr__(self, "targets", _frozen(targets.copy()))
        object.__setattr__(self, "pixel_index", _frozen(pix.copy()))

    @property
    def n_obs(self) -> int:
        return self.design.shape[0]

    @property
    def n_bases(self) -> int:
        return self.design.shape[1]


def latent_to_depth(z):
    """Exponential activation: latent (log-depth) to metric depth."""
    if np.ndim(z) == 0:
        return math.exp(z)
    return np.exp(np.asarray(z, dtype=np.float64))


def depth_to_latent(d):
    """Natural log of a strictly positive depth."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(~(arr > 0.0)):
        raise DomainError("depth must be strictly positive")
    if arr.ndim == 0:
        return math.log(float(arr))
    return np.log(arr)


def assemble(basis: BasisMap, sparse: SparseDepthSet) -> RegressionSystem:
    sparse.check_bounds(basis.height, basis.width)
    design = basis.values[sparse.rows, sparse.cols, :]
    targets = np.log(sparse.depths)
    pix = np.stack([sparse.rows, sparse.cols], axis=1)
    return RegressionSystem(design.reshape(len(sparse), basis.num_bases), targets, pix)
