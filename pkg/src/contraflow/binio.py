"""Little-endian tagged-binary helpers shared by the RSFL and CBOK formats.

A *field section* is ``u8 count`` followed by ``count`` fields, each
``u8 tag | u8 type | payload``. Types: 1=u32, 2=u64, 3=f32, 4=f64.
Files end with a CRC-32 (zlib) of all preceding bytes.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import FileFormatError

_TYPE_U32, _TYPE_U64, _TYPE_F32, _TYPE_F64 = 1, 2, 3, 4
_TYPE_FMT = {_TYPE_U32: "<I", _TYPE_U64: "<Q", _TYPE_F32: "<f", _TYPE_F64: "<d"}


def pack_fields(fields: list[tuple[int, int, float]]) -> bytes:
    """Serialize ``(tag, type, value)`` triples as one field section."""
    if len(fields) > 255:
        raise ValueError("too many fields for one section")
    out = [struct.pack("<B", len(fields))]
    for tag, ftype, value in fields:
        fmt = _TYPE_FMT[ftype]
        if ftype in (_TYPE_U32, _TYPE_U64):
            value = int(value)
        out.append(struct.pack("<BB", tag, ftype) + struct.pack(fmt, value))
    return b"".join(out)


def unpack_fields(blob: bytes, offset: int) -> tuple[dict[int, float], int]:
    """Parse one field section; returns (tag -> value, next offset)."""
    if offset >= len(blob):
        raise FileFormatError("truncated field section")
    (count,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    fields: dict[int, float] = {}
    for _ in range(count):
        try:
            tag, ftype = struct.unpack_from("<BB", blob, offset)
            offset += 2
            fmt = _TYPE_FMT.get(ftype)
            if fmt is None:
                raise FileFormatError(f"unknown field type {ftype}")
            (value,) = struct.unpack_from(fmt, blob, offset)
            offset += struct.calcsize(fmt)
        except struct.error as exc:
            raise FileFormatError("truncated field section") from exc
        fields[tag] = value
    return fields, offset


def pack_array_f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def unpack_array_f32(blob: bytes, offset: int, shape: tuple[int, ...]) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape)) if shape else 1
    end = offset + 4 * count
    if end > len(blob):
        raise FileFormatError("truncated array blob")
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
    return arr, end


def with_checksum(payload: bytes) -> bytes:
    """Append a CRC-32 of the payload."""
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def verify_checksum(blob: bytes) -> bytes:
    """Validate and strip the trailing CRC-32; returns the payload."""
    if len(blob) < 4:
        raise FileFormatError("file too short for checksum")
    payload, (stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if stored != actual:
        raise FileFormatError(f"checksum mismatch: stored {stored:#010x}, computed {actual:#010x}")
    return payload
