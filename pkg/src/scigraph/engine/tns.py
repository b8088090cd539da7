"""The ".tns" binary tensor file used for fixtures, flows and checkpoints.

Layout (little-endian throughout):

    magic   4 bytes  "TNSR"
    version u8       1
    dtype   u8       1 = float32, 2 = float64
    ndim    u8
    reserved u8      0
    dims    ndim * u32
    payload row-major values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["save_tns", "load_tns", "TnsFormatError"]

MAGIC = b"TNSR"
VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class TnsFormatError(ValueError):
    """Malformed or unsupported .tns content."""


def save_tns(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _CODE_FOR:
        if arr.dtype.kind == "f":
            arr = arr.astype(np.float32)
        else:
            raise TnsFormatError(f"unsupported dtype {arr.dtype} for .tns")
    if arr.ndim > 255:
        raise TnsFormatError("too many dimensions")
    code = _CODE_FOR[arr.dtype]
    header = MAGIC + struct.pack("<BBBB", VERSION, code, arr.ndim, 0)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype(_DTYPE_CODES[code], copy=False).tobytes(order="C")
    path = Path(path)
    path.write_bytes(header + payload)


def load_tns(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise TnsFormatError(f"{path}: truncated header")
    if raw[:4] != MAGIC:
        raise TnsFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, code, ndim, reserved = struct.unpack("<BBBB", raw[4:8])
    if version != VERSION:
        raise TnsFormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise TnsFormatError(f"{path}: unknown dtype code {code}")
    if reserved != 0:
        raise TnsFormatError(f"{path}: reserved byte must be 0")
    need = 8 + 4 * ndim
    if len(raw) < need:
        raise TnsFormatError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{ndim}I", raw[8:need])
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = need + count * dtype.itemsize
    if len(raw) != expected:
        raise TnsFormatError(f"{path}: payload length {len(raw) - need} != "
                             f"expected {count * dtype.itemsize}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=need)
    return data.reshape(dims).astype(dtype.newbyteorder("="), copy=True)
