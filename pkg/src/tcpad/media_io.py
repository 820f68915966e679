"""Frame and tensor I/O, synthetic data generation, and the toy feature extractor.

Frames are 8-bit grayscale, stored on disk as binary PGM (P5). Dense tensors
travel in the FMAP v1 container, a little-endian row-major format shared with
the external feature extractor:

    magic   4 bytes  b"FMAP"
    version u8       1
    dtype   u8       0 = float32, 1 = uint8
    rank    u32
    dims    rank x u32
    payload prod(dims) x dtype-size bytes, row-major, innermost dim = channel
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyDirectory,
    GridTooFine,
    InvalidSpec,
    IoError,
    MalformedImage,
    TensorFormatError,
    TruncatedPayload,
    UnsupportedVersion,
    ValidationError,
)
from .grids import FeatureMapSequence, GridSpec

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
DTYPE_F32 = 0
DTYPE_U8 = 1

_DTYPE_OF_CODE = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}
_CODE_OF_KIND = {"f": DTYPE_F32, "u": DTYPE_U8}

TOY_FEATURE_DIM = 16


# ---------------------------------------------------------------------------
# Domain types


@dataclass
class FrameSequence:
    """Ordered grayscale frames, shape (T, H, W) uint8."""

    frames: np.ndarray
    frame_rate: float | None = None

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 3 or f.shape[0] < 1:
            raise DimensionMismatch(f"frames must be (T, H, W) with T >= 1, got {f.shape}")
        if f.dtype != np.uint8:
            raise DimensionMismatch(f"frames must be uint8, got {f.dtype}")
        self.frames = f

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass
class GroundTruth:
    """Per-frame abnormality labels and optional per-frame pixel masks."""

    frame_labels: np.ndarray
    pixel_masks: np.ndarray | None = None

    def __post_init__(self):
        labels = np.asarray(self.frame_labels, dtype=bool)
        if labels.ndim != 1:
            raise DimensionMismatch(f"frame labels must be 1-D, got shape {labels.shape}")
        self.frame_labels = labels
        if self.pixel_masks is not None:
            masks = np.asarray(self.pixel_masks, dtype=bool)
            if masks.ndim != 3 or masks.shape[0] != labels.shape[0]:
                raise DimensionMismatch(
                    f"masks shape {masks.shape} inconsistent with {labels.shape[0]} labels"
                )
            nonempty = masks.any(axis=(1, 2))
            if np.any(nonempty & ~labels):
                raise ValidationError("frame with a nonempty pixel mask is labeled normal")
            self.pixel_masks = masks

    @property
    def n_frames(self) -> int:
        return self.frame_labels.shape[0]


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the seeded blob-walk generator."""

    seed: int
    n_frames: int
    height: int
    width: int
    n_normal_blobs: int = 3
    normal_speed: float = 1.0
    anomaly_speed: float = 5.0
    anomaly_onset: int = 30
    blob_radius: int = 6

    def validate(self):
        if self.n_frames < 1:
            raise InvalidSpec("need at least one frame")
        if self.n_normal_blobs < 1:
            raise InvalidSpec("need at least one blob")
        if self.blob_radius < 1:
            raise InvalidSpec("blob radius must be positive")
        if min(self.height, self.width) < 2 * self.blob_radius + 2:
            raise InvalidSpec("frame too small for the blob radius")
        if self.normal_speed < 0:
            raise InvalidSpec("normal speed must be non-negative")
        if self.anomaly_speed <= self.normal_speed:
            raise InvalidSpec("anomaly speed must exceed normal speed")
        if not 0 <= self.anomaly_onset < self.n_frames:
            raise InvalidSpec("anomaly onset must fall inside the sequence")


@dataclass
class TensorFile:
    """A decoded FMAP v1 container."""

    data: np.ndarray
    dtype_code: int

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape


# ---------------------------------------------------------------------------
# PGM (P5)


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM file into a (H, W) uint8 array."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if raw[:2] != b"P5":
        raise MalformedImage(f"{path}: not a binary PGM (P5)")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise MalformedImage(f"{path}: truncated header")
        ch = raw[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(raw) and raw[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(raw[start:pos]))
        else:
            raise MalformedImage(f"{path}: unexpected byte {ch!r} in header")
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedImage(f"{path}: bad dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise MalformedImage(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace byte separates maxval from pixel data
    pixels = raw[pos : pos + width * height]
    if len(pixels) != width * height:
        raise MalformedImage(f"{path}: expected {width * height} pixel bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def write_pgm(path, image: np.ndarray):
    """Write a (H, W) uint8 array as binary PGM."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise DimensionMismatch(f"PGM image must be 2-D, got shape {img.shape}")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + img.tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_frame_sequence(dir_path, pattern: str = "*.pgm") -> FrameSequence:
    """Load the PGM frames in dir_path matching pattern, ordered by filename."""
    d = Path(dir_path)
    if not d.is_dir():
        raise EmptyDirectory(f"{dir_path}: not a directory")
    paths = sorted(d.glob(pattern), key=lambda p: p.name)
    if not paths:
        raise EmptyDirectory(f"{dir_path}: no files match {pattern!r}")
    frames = []
    for p in paths:
        img = read_pgm(p)
        if frames and img.shape != frames[0].shape:
            raise DimensionMismatch(
                f"{p.name}: frame is {img.shape[0]}x{img.shape[1]}, "
                f"expected {frames[0].shape[0]}x{frames[0].shape[1]}"
            )
        frames.append(img)
    return FrameSequence(np.stack(frames))


def write_frame_sequence(dir_path, frames: FrameSequence):
    """Write frames as zero-padded 000001.pgm, 000002.pgm, ..."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for t in range(frames.n_frames):
        write_pgm(d / f"{t + 1:06d}.pgm", frames.frames[t])


# ---------------------------------------------------------------------------
# FMAP v1 tensors


def write_tensor(path, array: np.ndarray):
    """Serialize a float32 or uint8 array as FMAP v1; round-trips bit-exactly."""
    arr = np.ascontiguousarray(array)
    if arr.dtype == np.float32:
        code = DTYPE_F32
        payload = arr.astype("<f4", copy=False)
    elif arr.dtype == np.uint8:
        code = DTYPE_U8
        payload = arr
    else:
        raise ValueError(f"FMAP stores float32 or uint8, got {arr.dtype}")
    if arr.ndim < 1:
        raise ValueError("FMAP tensors must have at least one dimension")
    header = FMAP_MAGIC + struct.pack("<BBI", FMAP_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    try:
        Path(path).write_bytes(header + payload.tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_tensor(path) -> TensorFile:
    """Read an FMAP v1 file back into a TensorFile."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(raw) < 10:
        raise TruncatedPayload(f"{path}: file shorter than the fixed header")
    if raw[:4] != FMAP_MAGIC:
        raise BadMagic(f"{path}: magic {raw[:4]!r} is not {FMAP_MAGIC!r}")
    version, code, rank = struct.unpack("<BBI", raw[4:10])
    if version != FMAP_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, expected {FMAP_VERSION}")
    if code not in _DTYPE_OF_CODE:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    if not 1 <= rank <= 32:
        raise TensorFormatError(f"{path}: implausible rank {rank}")
    if len(raw) < 10 + 4 * rank:
        raise TruncatedPayload(f"{path}: header truncated before {rank} dims")
    dims = struct.unpack(f"<{rank}I", raw[10 : 10 + 4 * rank])
    dtype = _DTYPE_OF_CODE[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[10 + 4 * rank :]
    if len(payload) < expected:
        raise TruncatedPayload(f"{path}: payload {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise TensorFormatError(f"{path}: {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype=dtype).reshape(dims)
    if code == DTYPE_F32:
        data = data.astype(np.float32, copy=False)  # native byte order view
    return TensorFile(data=data, dtype_code=code)


# ---------------------------------------------------------------------------
# Ground truth


def load_ground_truth(path, pattern: str = "*.pgm") -> GroundTruth:
    """Load pixel masks from an FMAP u8 tensor (T, H, W) or a directory of PGMs.

    Nonzero pixels mark abnormality; frame labels are derived from the masks.
    """
    p = Path(path)
    if p.is_dir():
        seq = load_frame_sequence(p, pattern)
        masks = seq.frames > 0
    else:
        tf = read_tensor(p)
        if tf.data.ndim != 3:
            raise DimensionMismatch(f"mask tensor must be rank 3, got rank {tf.data.ndim}")
        masks = tf.data > 0
    return GroundTruth(frame_labels=masks.any(axis=(1, 2)), pixel_masks=masks)


# ---------------------------------------------------------------------------
# Synthetic generator


def generate_synthetic(spec: SyntheticSpec) -> tuple[FrameSequence, GroundTruth]:
    """Render a seeded blob-walk video with one blob turning anomalous.

    Blobs do a bounded random walk at normal_speed on a dark background; from
    anomaly_onset, blob 0 moves at anomaly_speed with a distinct intensity.
    Pixel masks cover the anomalous blob, frame labels are true from onset on.
    Output is a pure function of the spec (byte-for-byte deterministic).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_normal_blobs
    rad = spec.blob_radius
    lo_y, hi_y = float(rad), float(spec.height - 1 - rad)
    lo_x, hi_x = float(rad), float(spec.width - 1 - rad)

    pos = np.empty((n, 2))
    pos[:, 0] = rng.uniform(lo_y, hi_y, size=n)
    pos[:, 1] = rng.uniform(lo_x, hi_x, size=n)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    vel = np.stack([np.sin(theta), np.cos(theta)], axis=1)  # (dy, dx) unit headings

    background = 30
    normal_intensity = 200
    anomaly_intensity = 110

    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    frames = np.empty((spec.n_frames, spec.height, spec.width), dtype=np.uint8)
    masks = np.zeros((spec.n_frames, spec.height, spec.width), dtype=bool)

    def disc(center):
        return (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= rad * rad

    for t in range(spec.n_frames):
        anomalous = t >= spec.anomaly_onset
        if t > 0:
            turn = rng.normal(0.0, 0.3, size=n)
            cos_t, sin_t = np.cos(turn), np.sin(turn)
            dy = vel[:, 0] * cos_t + vel[:, 1] * sin_t
            dx = -vel[:, 0] * sin_t + vel[:, 1] * cos_t
            vel = np.stack([dy, dx], axis=1)
            speed = np.full(n, spec.normal_speed)
            if anomalous:
                speed[0] = spec.anomaly_speed
            pos = pos + vel * speed[:, None]
            # reflect off the walls, flipping the heading component
            for axis, (lo, hi) in enumerate([(lo_y, hi_y), (lo_x, hi_x)]):
                under = pos[:, axis] < lo
                over = pos[:, axis] > hi
                pos[under, axis] = 2 * lo - pos[under, axis]
                pos[over, axis] = 2 * hi - pos[over, axis]
                vel[under | over, axis] *= -1
            pos[:, 0] = np.clip(pos[:, 0], lo_y, hi_y)
            pos[:, 1] = np.clip(pos[:, 1], lo_x, hi_x)

        frame = np.full((spec.height, spec.width), background, dtype=np.uint8)
        for b in range(n):
            value = anomaly_intensity if (b == 0 and anomalous) else normal_intensity
            d = disc(pos[b])
            frame[d] = np.maximum(frame[d], value)
        frames[t] = frame
        if anomalous:
            masks[t] = disc(pos[0])

    labels = np.arange(spec.n_frames) >= spec.anomaly_onset
    return FrameSequence(frames), GroundTruth(frame_labels=labels, pixel_masks=masks)


# ---------------------------------------------------------------------------
# Toy feature extractor


def extract_toy_features(frames: FrameSequence, grid: GridSpec) -> FeatureMapSequence:
    """Compute a 16-D appearance/motion descriptor per grid cell per frame.

    Channels, each scaled to [0, 1]:
      0     mean intensity
      1     intensity standard deviation
      2-9   gradient-orientation histogram (8 unsigned bins over [0, pi),
            magnitude-weighted, normalized by total magnitude)
      10-11 temporal-difference energy vs the previous frame (mean positive
            and mean negative difference; zeros for the first frame)
      12-15 coarse quadrant mean intensities
    """
    if grid.rows > frames.height or grid.cols > frames.width:
        raise GridTooFine(
            f"grid {grid.rows}x{grid.cols} finer than frames {frames.height}x{frames.width}"
        )
    if grid.frame_h != frames.height or grid.frame_w != frames.width:
        raise DimensionMismatch(
            f"grid is for {grid.frame_h}x{grid.frame_w} frames, got {frames.height}x{frames.width}"
        )

    t_total = frames.n_frames
    feats = np.zeros((t_total, grid.rows, grid.cols, TOY_FEATURE_DIM), dtype=np.float64)
    n_bins = 8

    cells = [(r, c, *grid.cell_slices(r, c)) for r in range(grid.rows) for c in range(grid.cols)]

    prev = None
    for t in range(t_total):
        img = frames.frames[t].astype(np.float64)
        gy, gx = np.gradient(img)
        mag = np.hypot(gx, gy)
        orient = np.mod(np.arctan2(gy, gx), np.pi)
        bins = np.minimum((orient / np.pi * n_bins).astype(np.intp), n_bins - 1)
        diff = img - prev if prev is not None else None

        for r, c, rs, cs in cells:
            patch = img[rs, cs]
            vec = feats[t, r, c]
            vec[0] = patch.mean() / 255.0
            vec[1] = patch.std() / 255.0

            w = mag[rs, cs].ravel()
            total = w.sum()
            if total > 0:
                hist = np.bincount(bins[rs, cs].ravel(), weights=w, minlength=n_bins)
                vec[2:10] = hist / total

            if diff is not None:
                d = diff[rs, cs]
                vec[10] = np.maximum(d, 0.0).mean() / 255.0
                vec[11] = np.maximum(-d, 0.0).mean() / 255.0

            h2, w2 = (patch.shape[0] + 1) // 2, (patch.shape[1] + 1) // 2
            quads = (patch[:h2, :w2], patch[:h2, w2:], patch[h2:, :w2], patch[h2:, w2:])
            for q, quad in enumerate(quads):
                vec[12 + q] = (quad.mean() if quad.size else patch.mean()) / 255.0
        prev = img

    return FeatureMapSequence(features=feats.astype(np.float32), grid=grid)
