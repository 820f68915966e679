"""FMAP v1 writer: the wire format shared with the analysis pipeline.

Layout: magic b"FMAP", version u8 = 1, dtype u8 (0 = float32), rank u32,
rank x u32 dims, then the row-major little-endian payload. Byte-for-byte
compatibility matters more than convenience here, so the writer is strict.
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"FMAP"
VERSION = 1
DTYPE_F32 = 0


def write_tensor_atomic(path, array: np.ndarray):
    """Write a float32 tensor; temp file + rename so readers never see partial data."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim < 1:
        raise ValueError("tensors need at least one dimension")
    header = MAGIC + struct.pack("<BBI", VERSION, DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(arr.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
