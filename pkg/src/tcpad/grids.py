"""Spatial grid geometry shared by the feature, code and score maps.

A frame of H x W pixels is partitioned into rows x cols rectangular cells.
Cell (r, c) spans pixel rows [r * (H // rows), (r+1) * (H // rows)) except
that the last row/col absorbs the remainder, so the cells tile the frame
exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, GridTooFine


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    frame_h: int
    frame_w: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionMismatch(f"grid {self.rows}x{self.cols} must be at least 1x1")
        if self.rows > self.frame_h or self.cols > self.frame_w:
            raise GridTooFine(
                f"grid {self.rows}x{self.cols} finer than frame {self.frame_h}x{self.frame_w}"
            )

    def row_bounds(self, r: int) -> tuple[int, int]:
        h = self.frame_h // self.rows
        lo = r * h
        hi = self.frame_h if r == self.rows - 1 else (r + 1) * h
        return lo, hi

    def col_bounds(self, c: int) -> tuple[int, int]:
        w = self.frame_w // self.cols
        lo = c * w
        hi = self.frame_w if c == self.cols - 1 else (c + 1) * w
        return lo, hi

    def cell_slices(self, r: int, c: int) -> tuple[slice, slice]:
        r0, r1 = self.row_bounds(r)
        c0, c1 = self.col_bounds(c)
        return slice(r0, r1), slice(c0, c1)

    def cell_area(self, r: int, c: int) -> int:
        r0, r1 = self.row_bounds(r)
        c0, c1 = self.col_bounds(c)
        return (r1 - r0) * (c1 - c0)

    def pixel_row_index(self) -> np.ndarray:
        """Cell row owning each pixel row (length frame_h)."""
        h = self.frame_h // self.rows
        return np.minimum(np.arange(self.frame_h) // h, self.rows - 1)

    def pixel_col_index(self) -> np.ndarray:
        w = self.frame_w // self.cols
        return np.minimum(np.arange(self.frame_w) // w, self.cols - 1)


@dataclass
class FeatureMapSequence:
    """Per-frame spatial grid of D-dimensional feature vectors, T frames deep.

    features has shape (T, rows, cols, D), float32.
    """

    features: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float32)
        if f.ndim != 4:
            raise DimensionMismatch(f"feature tensor must be rank 4, got rank {f.ndim}")
        if f.shape[1] != self.grid.rows or f.shape[2] != self.grid.cols:
            raise DimensionMismatch(
                f"feature grid {f.shape[1]}x{f.shape[2]} does not match spec "
                f"{self.grid.rows}x{self.grid.cols}"
            )
        self.features = f

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[3]

    def flat_vectors(self) -> np.ndarray:
        """All feature vectors as an (T*rows*cols, D) matrix."""
        return self.features.reshape(-1, self.features.shape[3])
