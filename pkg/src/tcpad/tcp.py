"""Temporal code-pattern scoring.

A video block is one grid cell tracked over a fixed-length window of frames
(default 14 frames, stride 1, so consecutive windows share 13 frames). Each
block's prototype histogram is reduced to a scalar irregularity: the summed
squared differences between every bin and the dominant (modal) bin. Raw
block values are min-max normalized per video; with the default inverted
orientation the score is 1 minus the normalized value, so static
single-prototype blocks land at 0 (background) and appearance-diverse blocks
near 1. Scores land on the block's center frame; frames without a centered
block score 0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    CodeOutOfRange,
    DimensionMismatch,
    EmptyHistogram,
    SequenceTooShort,
    ValidationError,
)
from .grids import GridSpec
from .quantizer import BinaryMapSequence

DEFAULT_BLOCK_LEN = 14
DEFAULT_STRIDE = 1
DEFAULT_BG_THRESHOLD = 0.1

KIND_RAW_TCP = "raw-tcp"
KIND_NORMALIZED_TCP = "normalized-tcp"
KIND_FLOW = "flow"
KIND_FUSED = "fused"
# fused maps are bounded by alpha + beta instead, see fusion.fuse_maps
_NORMALIZED_KINDS = (KIND_NORMALIZED_TCP, KIND_FLOW)

ORIENT_INVERTED = "inverted"
ORIENT_LITERAL = "literal"

_BOUND_SLACK = 1e-9


@dataclass
class ScoreMapSequence:
    """Per-frame scalar score grids, shape (T, rows, cols)."""

    values: np.ndarray
    grid: GridSpec
    kind: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise DimensionMismatch(f"score values must be (T, rows, cols), got {v.shape}")
        if v.shape[1] != self.grid.rows or v.shape[2] != self.grid.cols:
            raise DimensionMismatch(
                f"score grid {v.shape[1]}x{v.shape[2]} does not match spec "
                f"{self.grid.rows}x{self.grid.cols}"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("score values must be finite")
        if v.size and v.min() < -_BOUND_SLACK:
            raise ValidationError("score values must be non-negative")
        if self.kind in _NORMALIZED_KINDS and v.size and v.max() > 1.0 + _BOUND_SLACK:
            raise ValidationError(f"{self.kind} scores must lie in [0, 1]")
        self.values = v

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class VideoBlock:
    """One grid cell across one window of consecutive frames."""

    row: int
    col: int
    center_frame: int
    codes: np.ndarray


@dataclass
class BlockHistogram:
    """Prototype counts over a block; the mass equals the block length."""

    counts: np.ndarray
    total: int


def window_starts(n_frames: int, block_len: int, stride: int) -> range:
    """Start indices of the overlapped windows laid over n_frames."""
    if block_len < 1 or stride < 1:
        raise ValidationError("block length and stride must be positive")
    if n_frames < block_len:
        raise SequenceTooShort(f"need at least {block_len} frames, got {n_frames}")
    return range(0, n_frames - block_len + 1, stride)


def extract_blocks(
    codes: BinaryMapSequence,
    block_len: int = DEFAULT_BLOCK_LEN,
    stride: int = DEFAULT_STRIDE,
) -> list[VideoBlock]:
    """One block per (cell, window start); the center frame indexes the block."""
    starts = window_starts(codes.n_frames, block_len, stride)
    half = block_len // 2
    blocks = []
    for s in starts:
        window = codes.codes[s : s + block_len]
        for r in range(codes.grid.rows):
            for c in range(codes.grid.cols):
                blocks.append(VideoBlock(row=r, col=c, center_frame=s + half, codes=window[:, r, c]))
    return blocks


def block_histogram(block: VideoBlock, bits: int) -> BlockHistogram:
    """Aggregate the one-hot histograms of the block members."""
    codes = np.asarray(block.codes)
    n_bins = 1 << bits
    if codes.size == 0:
        raise EmptyHistogram("block has no member codes")
    if codes.min() < 0 or codes.max() >= n_bins:
        raise CodeOutOfRange(f"block codes must lie in [0, {n_bins})")
    counts = np.bincount(codes, minlength=n_bins)
    return BlockHistogram(counts=counts, total=int(counts.sum()))


def tcp_raw(hist: BlockHistogram) -> float:
    """Summed squared deviation of every bin from the dominant bin.

    Zero for a perfectly uniform histogram; maximal, (n_bins - 1) * mass^2,
    when all mass sits in a single prototype. Ties for the dominant bin break
    to the lowest index, which cannot change the value.
    """
    if hist.total <= 0:
        raise EmptyHistogram("histogram carries no mass")
    counts = np.asarray(hist.counts, dtype=np.int64)
    dominant = counts[np.argmax(counts)]
    return float(np.sum((counts - dominant) ** 2))


def normalize_scores(
    raw: ScoreMapSequence,
    orientation: str = ORIENT_INVERTED,
    bg_threshold: float = DEFAULT_BG_THRESHOLD,
) -> ScoreMapSequence:
    """Min-max normalize raw block values over the whole sequence to [0, 1].

    With the inverted orientation (default) the normalized value is flipped so
    that static single-prototype blocks score 0 and diverse blocks score 1.
    Values below bg_threshold are zeroed (background subtraction). A constant
    raw map normalizes to all zeros.
    """
    if raw.kind != KIND_RAW_TCP:
        raise ValidationError(f"expected a {KIND_RAW_TCP} map, got {raw.kind}")
    if orientation not in (ORIENT_INVERTED, ORIENT_LITERAL):
        raise ValidationError(f"unknown orientation {orientation!r}")
    vals = raw.values
    lo, hi = vals.min(), vals.max()
    if hi == lo:
        out = np.zeros_like(vals)
    else:
        out = (vals - lo) / (hi - lo)
        if orientation == ORIENT_INVERTED:
            out = 1.0 - out
        out[out < bg_threshold] = 0.0
    return ScoreMapSequence(values=out, grid=raw.grid, kind=KIND_NORMALIZED_TCP)


def tcp_map_sequence(
    codes: BinaryMapSequence,
    block_len: int = DEFAULT_BLOCK_LEN,
    stride: int = DEFAULT_STRIDE,
    orientation: str = ORIENT_INVERTED,
    bg_threshold: float = DEFAULT_BG_THRESHOLD,
) -> ScoreMapSequence:
    """Score every block, normalize, and assemble per-frame score maps.

    Each block's value lands at (center frame, cell). Normalization runs over
    the block values only; frames without a centered block are then padded
    with 0 so the output stays frame-aligned with the input sequence.
    """
    starts = window_starts(codes.n_frames, block_len, stride)
    center_index = {s + block_len // 2: i for i, s in enumerate(starts)}
    raw = np.zeros((len(center_index), codes.grid.rows, codes.grid.cols))
    for block in extract_blocks(codes, block_len, stride):
        value = tcp_raw(block_histogram(block, codes.bits))
        raw[center_index[block.center_frame], block.row, block.col] = value
    normalized = normalize_scores(
        ScoreMapSequence(values=raw, grid=codes.grid, kind=KIND_RAW_TCP),
        orientation=orientation,
        bg_threshold=bg_threshold,
    )
    full = np.zeros((codes.n_frames, codes.grid.rows, codes.grid.cols))
    for center, i in center_index.items():
        full[center] = normalized.values[i]
    return ScoreMapSequence(values=full, grid=codes.grid, kind=KIND_NORMALIZED_TCP)


def upsample_map(score_map: ScoreMapSequence, target_h: int, target_w: int) -> ScoreMapSequence:
    """Replicate each cell's value over its pixel block (no interpolation)."""
    grid = score_map.grid
    if grid.frame_h != target_h or grid.frame_w != target_w:
        raise DimensionMismatch(
            f"map is laid out for {grid.frame_h}x{grid.frame_w} frames, "
            f"cannot upsample to {target_h}x{target_w}"
        )
    rows = grid.pixel_row_index()
    cols = grid.pixel_col_index()
    up = score_map.values[:, rows[:, None], cols[None, :]]
    return ScoreMapSequence(
        values=up,
        grid=GridSpec(rows=target_h, cols=target_w, frame_h=target_h, frame_w=target_w),
        kind=score_map.kind,
    )


def frame_signal(score_map: ScoreMapSequence) -> np.ndarray:
    """Per-frame abnormality indicator: patch-score sums min-maxed to [0, 1]."""
    if score_map.kind == KIND_RAW_TCP:
        raise ValidationError("frame signal expects a normalized score map")
    sums = score_map.values.sum(axis=(1, 2))
    lo, hi = sums.min(), sums.max()
    if hi == lo:
        return np.zeros_like(sums)
    return (sums - lo) / (hi - lo)
