"""Bit-exact binary tensor files.

Layout: magic bytes ``LDT1``, one u8 dtype code (1 = float32, 2 = int32,
3 = u8 boolean), one u8 ndim, ndim little-endian u64 dims, then the
row-major payload. Values round-trip bit-for-bit.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, DimensionError, TruncatedPayloadError, ValidationError
from .fuzzy import ProbBatch

MAGIC = b"LDT1"

_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<i4"), 3: np.dtype("u1")}
_KIND_TO_CODE = {"f": 1, "i": 2, "b": 3}


def write_array(path: str | Path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    code = _KIND_TO_CODE.get(arr.dtype.kind)
    if code is None or arr.dtype.itemsize not in (1, 4):
        raise ValidationError(
            f"unsupported dtype {arr.dtype}; use float32, int32, or bool"
        )
    if arr.dtype.kind == "b":
        payload = arr.astype("u1")
    else:
        payload = arr.astype(_CODE_TO_DTYPE[code])
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(payload).tobytes())


def read_array(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise BadMagicError(
            f"{path}: expected magic {MAGIC!r}, found {blob[:4]!r}"
        )
    if len(blob) < 6:
        raise TruncatedPayloadError(f"{path}: header cut short")
    code, ndim = struct.unpack_from("<BB", blob, 4)
    dtype = _CODE_TO_DTYPE.get(code)
    if dtype is None:
        raise DimensionError(f"{path}: unknown dtype code {code}")
    if ndim == 0:
        raise DimensionError(f"{path}: ndim must be at least 1")
    dims_end = 6 + 8 * ndim
    if len(blob) < dims_end:
        raise TruncatedPayloadError(f"{path}: dimension table cut short")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 6)
    expected = int(np.prod([int(d) for d in dims], dtype=object)) * dtype.itemsize
    payload = blob[dims_end:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: dims {dims} need {expected} payload bytes, found {len(payload)}"
        )
    if len(payload) > expected:
        raise DimensionError(
            f"{path}: {len(payload) - expected} trailing bytes beyond declared dims"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(bool) if code == 3 else arr


def read_tensor(path: str | Path) -> ProbBatch:
    """Read a 2-D float32 probability tensor and ingest it as a batch."""
    arr = read_array(path)
    if arr.dtype != np.float32:
        raise DimensionError(f"{path}: probability tensor must be float32")
    if arr.ndim != 2:
        raise DimensionError(
            f"{path}: probability tensor must be 2-D, got {arr.ndim}-D"
        )
    return ProbBatch.from_array(arr)


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValidationError("labels must be a 1-D vector")
    write_array(path, labels.astype(np.int32))


def write_stats(path: str | Path, stats: dict) -> None:
    Path(path).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
