"""Binary checkpoint format.

Layout, all integers little-endian::

    b"LMUC"  u32 version  u8 precision  u32 count
    count x { u32 name_len, name, u8 dtype, u32 rank, rank x u64 extent, payload }
    u32 crc32 of everything above

``precision`` records the run's float width (0 = f32, 1 = f64).  Each record
also carries its own dtype code so integer bookkeeping and JSON metadata can
sit next to float tensors without rounding.
"""
from __future__ import annotations

import json
import struct
import zlib
from typing import Mapping

import numpy as np

from lmulm.errors import CheckpointCorruptError, CheckpointFormatError, CheckpointVersionError
from lmulm.numerics.tensor import Tensor, get_precision

MAGIC = b"LMUC"
VERSION = 1
_PRECISIONS = {"f32": 0, "f64": 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}
_HEAD = struct.Struct("<4sIBI")


def _code(a: np.ndarray) -> int:
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    if dt.kind == "f":
        return _CODES[np.dtype("<f4") if dt.itemsize == 4 else np.dtype("<f8")]
    if dt.kind in "iub" and dt != np.dtype("u1"):
        return _CODES[np.dtype("<i8")]
    if dt == np.dtype("u1"):
        return 3
    raise TypeError(f"cannot store dtype {a.dtype}")


def encode_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8)


def decode_json(arr: np.ndarray):
    return json.loads(arr.tobytes().decode())


def save_checkpoint(tensors: Mapping[str, "np.ndarray | Tensor"], path: str, precision: str | None = None) -> None:
    """Write named arrays to ``path``; the round trip is bit-exact."""
    prec = precision or get_precision()
    out = bytearray(_HEAD.pack(MAGIC, VERSION, _PRECISIONS[prec], len(tensors)))
    for name, value in tensors.items():
        a = np.asarray(value.data if isinstance(value, Tensor) else value)
        code = _code(a)
        a = a.astype(_DTYPES[code], copy=False)  # tobytes() is C order; keeps rank 0
        raw = name.encode()
        out += struct.pack("<I", len(raw)) + raw + struct.pack("<BI", code, a.ndim)
        out += struct.pack(f"<{a.ndim}Q", *a.shape) + a.tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    with open(path, "wb") as fh:
        fh.write(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, k: int) -> bytes:
        if self.pos + k > len(self.buf):
            raise CheckpointFormatError(f"record runs past end of data at byte {self.pos}")
        b = self.buf[self.pos:self.pos + k]
        self.pos += k
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], str]:
    """Read a checkpoint; returns ``(arrays by name, precision name)``.

    Raises
    ------
    CheckpointFormatError
        Wrong magic or malformed structure.
    CheckpointVersionError
        Unsupported format version.
    CheckpointCorruptError
        CRC mismatch, including truncation.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < _HEAD.size + 4:
        raise CheckpointCorruptError(f"file truncated to {len(buf)} bytes")
    _, version, prec, count = _HEAD.unpack_from(buf)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, supported {VERSION}")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointCorruptError("CRC mismatch: file is truncated or corrupted")
    names = {v: k for k, v in _PRECISIONS.items()}
    if prec not in names:
        raise CheckpointFormatError(f"unknown precision tag {prec}")
    r = _Reader(buf[_HEAD.size:-4])
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (ln,) = r.unpack("<I")
        name = r.take(ln).decode()
        code, rank = r.unpack("<BI")
        if code not in _DTYPES:
            raise CheckpointFormatError(f"unknown dtype code {code} for {name!r}")
        shape = r.unpack(f"<{rank}Q")
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).copy()
    if r.pos != len(r.buf):
        raise CheckpointFormatError(f"{len(r.buf) - r.pos} trailing bytes after {count} records")
    return out, names[prec]
