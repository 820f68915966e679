"""Dense optical flow between consecutive frames and its block aggregation.

The built-in solver is coarse-to-fine pyramidal Horn-Schunck: at each pyramid
level the second frame is warped by the current flow estimate and a flow
increment is solved from the linearized brightness-constancy term plus a
quadratic smoothness term via fixed-point sweeps. Exact flow from an external
solver can be ingested instead (FMAP v1, dims (T-1, H, W, 2), channels u, v).

Intensities are used on their native 0..255 scale; the smoothness weight is
calibrated for that range.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, SequenceTooShort, ValidationError
from .grids import GridSpec
from .media_io import DTYPE_F32, FrameSequence, read_tensor
from .tcp import KIND_FLOW, DEFAULT_BLOCK_LEN, DEFAULT_STRIDE, ScoreMapSequence, window_starts

# Horn-Schunck neighborhood average (flow "bar" term)
_AVG_KERNEL = np.array(
    [[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]]
)
_KX = 0.25 * np.array([[-1.0, 1.0], [-1.0, 1.0]])
_KY = 0.25 * np.array([[-1.0, -1.0], [1.0, 1.0]])
_KT = 0.25 * np.ones((2, 2))

_MIN_LEVEL_DIM = 4


@dataclass
class FlowField:
    """Per-pixel displacement (u = x, v = y) for one frame pair, in px/frame."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise DimensionMismatch(f"u {u.shape} and v {v.shape} must be equal 2-D shapes")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValidationError("flow components must be finite")
        self.u, self.v = u, v


@dataclass(frozen=True)
class FlowParams:
    smoothness: float = 15.0
    levels: int = 4
    scale: float = 0.5
    iters: int = 100

    def __post_init__(self):
        if self.smoothness <= 0:
            raise ValidationError("smoothness must be positive")
        if self.levels < 1:
            raise ValidationError("need at least one pyramid level")
        if not 0.0 < self.scale < 1.0:
            raise ValidationError("scale must lie strictly between 0 and 1")
        if self.iters < 1:
            raise ValidationError("need at least one sweep per level")


def _pyramid_sizes(h: int, w: int, params: FlowParams) -> list[tuple[int, int]]:
    """Level sizes, finest first; levels below the minimum size are dropped."""
    sizes = [(h, w)]
    for _ in range(1, params.levels):
        nh = round(sizes[-1][0] * params.scale)
        nw = round(sizes[-1][1] * params.scale)
        if min(nh, nw) < _MIN_LEVEL_DIM:
            break
        sizes.append((nh, nw))
    return sizes


def _resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    zoom = (size[0] / img.shape[0], size[1] / img.shape[1])
    return ndimage.zoom(img, zoom, order=1, mode="nearest", grid_mode=True)


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    yy, xx = np.mgrid[0 : img.shape[0], 0 : img.shape[1]]
    return ndimage.map_coordinates(img, [yy + v, xx + u], order=1, mode="nearest")


def _derivatives(f1: np.ndarray, f2: np.ndarray):
    # correlation semantics: the antisymmetric stencils must not be flipped
    corr = lambda img, k: ndimage.correlate(img, k, mode="nearest")
    fx = corr(f1, _KX) + corr(f2, _KX)
    fy = corr(f1, _KY) + corr(f2, _KY)
    ft = corr(f2, _KT) - corr(f1, _KT)
    return fx, fy, ft


def compute_flow(frame_a: np.ndarray, frame_b: np.ndarray, params: FlowParams = FlowParams()) -> FlowField:
    """Estimate the displacement field carrying frame_a onto frame_b.

    Convention: frame_a(y, x) ~ frame_b(y + v, x + u).
    """
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise DimensionMismatch(f"frames {a.shape} and {b.shape} must be equal 2-D shapes")

    sizes = _pyramid_sizes(a.shape[0], a.shape[1], params)
    pyr_a, pyr_b = [a], [b]
    for size in sizes[1:]:
        pyr_a.append(_resize(ndimage.gaussian_filter(pyr_a[-1], 1.0), size))
        pyr_b.append(_resize(ndimage.gaussian_filter(pyr_b[-1], 1.0), size))

    alpha2 = params.smoothness**2
    u = np.zeros(sizes[-1])
    v = np.zeros(sizes[-1])
    for level in range(len(sizes) - 1, -1, -1):
        size = sizes[level]
        if u.shape != size:
            # displacements scale with resolution, per axis
            u = _resize(u, size) * (size[1] / u.shape[1])
            v = _resize(v, size) * (size[0] / v.shape[0])
        f1, f2 = pyr_a[level], pyr_b[level]
        warped = _warp(f2, u, v)
        fx, fy, ft = _derivatives(f1, warped)
        denom = alpha2 + fx * fx + fy * fy
        du = np.zeros(size)
        dv = np.zeros(size)
        for _ in range(params.iters):
            du_avg = ndimage.convolve(du, _AVG_KERNEL, mode="nearest")
            dv_avg = ndimage.convolve(dv, _AVG_KERNEL, mode="nearest")
            shared = (fx * du_avg + fy * dv_avg + ft) / denom
            du = du_avg - fx * shared
            dv = dv_avg - fy * shared
        u = u + du
        v = v + dv
    return FlowField(u=u, v=v)


def compute_flow_sequence(
    frames: FrameSequence,
    params: FlowParams = FlowParams(),
    max_workers: int = 1,
) -> list[FlowField]:
    """Flow for every consecutive frame pair; pairs are independent jobs."""
    if frames.n_frames < 2:
        raise SequenceTooShort("need at least two frames for optical flow")
    imgs = frames.frames
    pairs = range(frames.n_frames - 1)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(lambda t: compute_flow(imgs[t], imgs[t + 1], params), pairs))
    return [compute_flow(imgs[t], imgs[t + 1], params) for t in pairs]


def flow_worker_cap(default: int = 1) -> int:
    """Worker parallelism cap from the TCP_THREADS environment variable."""
    value = os.environ.get("TCP_THREADS", "").strip()
    if value.isdigit() and int(value) > 0:
        return int(value)
    return default


def flow_magnitude(field: FlowField) -> np.ndarray:
    """Per-pixel displacement magnitude sqrt(u^2 + v^2)."""
    return np.hypot(field.u, field.v)


def aggregate_flow_blocks(
    magnitudes: np.ndarray,
    grid: GridSpec,
    block_len: int = DEFAULT_BLOCK_LEN,
    stride: int = DEFAULT_STRIDE,
) -> ScoreMapSequence:
    """Reduce per-pair magnitude maps to block-aligned flow score maps.

    Per cell and frame pair, the mean pixel magnitude; per window, the sum
    over the window's block_len - 1 frame pairs, assigned at the window's
    center frame (same windowing as the code blocks); finally min-max
    normalized over the assigned values to [0, 1], boundary frames padded 0.
    """
    mags = np.asarray(magnitudes, dtype=np.float64)
    if mags.ndim != 3:
        raise DimensionMismatch(f"magnitudes must be (T-1, H, W), got {mags.shape}")
    if mags.shape[1] != grid.frame_h or mags.shape[2] != grid.frame_w:
        raise DimensionMismatch(
            f"magnitude maps are {mags.shape[1]}x{mags.shape[2]}, "
            f"grid expects {grid.frame_h}x{grid.frame_w}"
        )
    n_pairs = mags.shape[0]
    n_frames = n_pairs + 1
    starts = window_starts(n_frames, block_len, stride)  # raises SequenceTooShort

    cell_means = np.empty((n_pairs, grid.rows, grid.cols))
    for r in range(grid.rows):
        for c in range(grid.cols):
            rs, cs = grid.cell_slices(r, c)
            cell_means[:, r, c] = mags[:, rs, cs].mean(axis=(1, 2))

    csum = np.concatenate([np.zeros((1, grid.rows, grid.cols)), np.cumsum(cell_means, axis=0)])
    raw = np.stack([csum[s + block_len - 1] - csum[s] for s in starts])

    lo, hi = raw.min(), raw.max()
    norm = np.zeros_like(raw) if hi == lo else (raw - lo) / (hi - lo)
    full = np.zeros((n_frames, grid.rows, grid.cols))
    half = block_len // 2
    for i, s in enumerate(starts):
        full[s + half] = norm[i]
    return ScoreMapSequence(values=full, grid=grid, kind=KIND_FLOW)


def read_external_flow(path) -> list[FlowField]:
    """Ingest precomputed flow: FMAP v1 f32, dims (T-1, H, W, 2), channels u, v."""
    tf = read_tensor(path)
    if tf.dtype_code != DTYPE_F32:
        raise DimensionMismatch(f"{path}: flow tensors must be float32")
    if tf.data.ndim != 4 or tf.data.shape[3] != 2:
        raise DimensionMismatch(
            f"{path}: flow tensors must have dims (T-1, H, W, 2), got {tf.data.shape}"
        )
    data = tf.data.astype(np.float64)
    return [FlowField(u=data[t, :, :, 0], v=data[t, :, :, 1]) for t in range(data.shape[0])]
