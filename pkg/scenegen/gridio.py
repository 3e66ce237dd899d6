"""
Self-describing float32 grids.

Layout: 4 magic bytes, one little-endian u32 per dimension, then row-major
little-endian float32 values. Depth maps use magic b"UDPT" with (H, W);
attack perturbations use b"UPRT" with (H, W, C).
"""
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from scenegen.errors import CorruptFileError, MissingFileError

DEPTH_MAGIC        = b"UDPT"
PERTURBATION_MAGIC = b"UPRT"

_NDIM = {DEPTH_MAGIC: 2, PERTURBATION_MAGIC: 3}


def write_grid(path: Union[str, Path], array: np.ndarray, magic: bytes = DEPTH_MAGIC) -> None:
    ndim = _NDIM[magic]
    if array.ndim != ndim:
        raise ValueError(f"{magic!r} grids are {ndim}-D, got shape {array.shape}")
    header = magic + struct.pack(f"<{ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_grid(path: Union[str, Path], magic: bytes = DEPTH_MAGIC) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"grid file not found: {path}")
    data = path.read_bytes()
    ndim = _NDIM[magic]
    head = 4 + 4 * ndim
    if len(data) < head or data[:4] != magic:
        raise CorruptFileError(f"{path}: bad magic, expected {magic!r}")
    shape: Tuple[int, ...] = struct.unpack(f"<{ndim}I", data[4:head])
    expected = int(np.prod(shape)) * 4
    if len(data) - head != expected:
        raise CorruptFileError(f"{path}: header says {shape} ({expected} bytes) but payload is {len(data) - head} bytes")
    return np.frombuffer(data[head:], dtype="<f4").reshape(shape).astype(np.float32)
