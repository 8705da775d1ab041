"""Per-slide binary feature containers.

One file per slide:

    magic   4 bytes "TCF1"
    n       u32 little-endian, instance count
    d       u32 little-endian, feature width
    payload n*d float32 little-endian, row-major
    coords  optional: 4 bytes "XY32", then n pairs of u32 (x, y)

Features are stored as float32 and promoted to float64 on read, which
is value-preserving.  Reads are per-slide, so iterating a large store
never holds more than one slide resident.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"TCF1"
COORDS_TAG = b"XY32"
MAX_ELEMENTS = 2**31  # sanity bound on n*d from an untrusted header


class FeatureStore:
    """Resolves feature references relative to a root directory."""

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, feature_ref: str) -> Path:
        return self.root / feature_ref

    def write(self, feature_ref: str, features: np.ndarray, coords: np.ndarray | None = None) -> None:
        write_features(self.path_for(feature_ref), features, coords)

    def read(self, feature_ref: str) -> np.ndarray:
        return read_features(self.path_for(feature_ref))

    def read_coords(self, feature_ref: str) -> np.ndarray | None:
        return read_coords(self.path_for(feature_ref))

    def read_header(self, feature_ref: str) -> tuple[int, int]:
        return read_header(self.path_for(feature_ref))


def write_features(path, features: np.ndarray, coords: np.ndarray | None = None) -> None:
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise DataError(f"features must be [n x d], got shape {arr.shape}")
    n, d = arr.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(arr.tobytes())
        if coords is not None:
            xy = np.ascontiguousarray(coords, dtype="<u4")
            if xy.shape != (n, 2):
                raise DataError(f"coords must be [{n} x 2], got {xy.shape}")
            fh.write(COORDS_TAG)
            fh.write(xy.tobytes())


def _read_head(path) -> tuple[bytes, int, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise DataError(f"{path}: too short for a feature header ({len(blob)} bytes)")
    magic = blob[:4]
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    n, d = struct.unpack("<II", blob[4:12])
    if n * d > MAX_ELEMENTS:
        raise DataError(f"{path}: header claims {n}x{d} elements, over the {MAX_ELEMENTS} limit")
    return blob, n, d


def read_header(path) -> tuple[int, int]:
    _, n, d = _read_head(path)
    return n, d


def read_features(path) -> np.ndarray:
    """Read the float32 payload, promoted to float64."""
    blob, n, d = _read_head(path)
    need = n * d * 4
    body = blob[12:]
    if len(body) < need:
        raise DataError(f"{path}: truncated payload, expected {need} bytes, found {len(body)}")
    values = np.frombuffer(body[:need], dtype="<f4").reshape(n, d)
    return values.astype(np.float64)


def read_coords(path) -> np.ndarray | None:
    blob, n, d = _read_head(path)
    offset = 12 + n * d * 4
    if len(blob) < offset:
        raise DataError(f"{path}: truncated payload, expected {n * d * 4} bytes, found {len(blob) - 12}")
    tail = blob[offset:]
    if not tail:
        return None
    if tail[:4] != COORDS_TAG:
        raise DataError(f"{path}: unknown trailing block tag {tail[:4]!r}")
    need = n * 2 * 4
    body = tail[4:]
    if len(body) < need:
        raise DataError(f"{path}: truncated coords block, expected {need} bytes, found {len(body)}")
    return np.frombuffer(body[:need], dtype="<u4").reshape(n, 2).astype(np.int64)
