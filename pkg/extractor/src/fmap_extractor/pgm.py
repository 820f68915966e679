"""Minimal binary PGM (P5) reader for 8-bit grayscale frames."""

from pathlib import Path

import numpy as np

from .errors import ImageDecodeError


def read_pgm(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ImageDecodeError(f"cannot read {path}: {e}") from e
    if raw[:2] != b"P5":
        raise ImageDecodeError(f"{path}: not a binary PGM (P5)")
    pos, fields = 2, []
    while len(fields) < 3:
        if pos >= len(raw):
            raise ImageDecodeError(f"{path}: truncated header")
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
            raise ImageDecodeError(f"{path}: unexpected byte {ch!r} in header")
    width, height, maxval = fields
    if not 0 < maxval <= 255:
        raise ImageDecodeError(f"{path}: only 8-bit PGM supported")
    pos += 1
    pixels = raw[pos : pos + width * height]
    if len(pixels) != width * height:
        raise ImageDecodeError(f"{path}: expected {width * height} pixel bytes")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def load_frames(dir_path, pattern="*.pgm") -> np.ndarray:
    d = Path(dir_path)
    paths = sorted(d.glob(pattern), key=lambda p: p.name)
    if not paths:
        raise ImageDecodeError(f"{dir_path}: no frames match {pattern!r}")
    frames = [read_pgm(p) for p in paths]
    if any(f.shape != frames[0].shape for f in frames):
        raise ImageDecodeError(f"{dir_path}: frames differ in size")
    return np.stack(frames)
