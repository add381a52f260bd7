"""Latent sequence container and the dense-array primitives built on it.

A latent sequence is a fixed-rate grid of ``channels x frames`` float32
values; noise samples, interpolants, velocities and corrupted negatives all
live in this type. Values are stored in 32-bit floats while loss sums
accumulate in 64-bit, so results are reproducible at the tested tolerances.

The on-disk form is the LTNT v1 format::

    magic 'LTNT' | u8 version=1 | u32 LE channels | u32 LE frames |
    f32 LE frame_rate | channels*frames f32 LE values, frame by frame

"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FileFormatError, ShapeError, SpanError

_LTNT_MAGIC = b"LTNT"
_LTNT_VERSION = 1


@dataclass
class LatentSequence:
    """A channels-by-frames grid of finite float32 values at a fixed frame rate."""

    data: np.ndarray = field(repr=False)
    frame_rate: float = 20.0

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ShapeError(f"latent data must be 2-D (channels, frames), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"latent must have >=1 channel and >=1 frame, got {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("latent contains non-finite values")
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        self.data = arr

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    def copy(self) -> "LatentSequence":
        return LatentSequence(self.data.copy(), self.frame_rate)

    def same_shape(self, other: "LatentSequence") -> bool:
        return self.data.shape == other.data.shape


def zeros_like(x: LatentSequence) -> LatentSequence:
    return LatentSequence(np.zeros_like(x.data), x.frame_rate)


def frames_for_seconds(seconds: float, frame_rate: float) -> int:
    """Number of frames spanning ``seconds`` at ``frame_rate`` fps.

    Rounds half up; any strictly positive duration maps to at least one frame.
    """
    if seconds < 0:
        raise ValueError(f"seconds must be >= 0, got {seconds}")
    if frame_rate <= 0:
        raise ValueError(f"frame_rate must be positive, got {frame_rate}")
    if seconds == 0:
        return 0
    return max(1, int(math.floor(seconds * frame_rate + 0.5)))


def mse(a: LatentSequence, b: LatentSequence) -> float:
    """Mean squared difference over all channels and frames (64-bit sums)."""
    if not a.same_shape(b):
        raise ShapeError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(d * d))


def overwrite_span(
    dst: LatentSequence, dst_start: int, src: LatentSequence, src_start: int, length: int
) -> LatentSequence:
    """Copy of ``dst`` with frames [dst_start, dst_start+length) replaced by
    ``src`` frames [src_start, src_start+length). Neither input is mutated;
    the source span is read before any write, so ``src is dst`` is safe.
    """
    if dst.channels != src.channels:
        raise ShapeError(f"channel mismatch: {dst.channels} vs {src.channels}")
    if length < 1:
        raise SpanError(f"span length must be >= 1, got {length}")
    if dst_start < 0 or dst_start + length > dst.frames:
        raise SpanError(
            f"destination span [{dst_start}, {dst_start + length}) outside [0, {dst.frames})"
        )
    if src_start < 0 or src_start + length > src.frames:
        raise SpanError(
            f"source span [{src_start}, {src_start + length}) outside [0, {src.frames})"
        )
    out = dst.data.copy()
    out[:, dst_start : dst_start + length] = src.data[:, src_start : src_start + length].copy()
    return LatentSequence(out, dst.frame_rate)


# -- LTNT v1 file format -------------------------------------------------


def write_ltnt(path, x: LatentSequence) -> None:
    payload = ltnt_bytes(x)
    with open(path, "wb") as fh:
        fh.write(payload)


def ltnt_bytes(x: LatentSequence) -> bytes:
    header = _LTNT_MAGIC + struct.pack(
        "<BIIf", _LTNT_VERSION, x.channels, x.frames, np.float32(x.frame_rate)
    )
    # frame-major layout: all channel values of frame 0, then frame 1, ...
    body = np.ascontiguousarray(x.data.T, dtype="<f4").tobytes()
    return header + body


def read_ltnt(path) -> LatentSequence:
    with open(path, "rb") as fh:
        return ltnt_from_bytes(fh.read())


def ltnt_from_bytes(blob: bytes) -> LatentSequence:
    head_len = 4 + struct.calcsize("<BIIf")
    if len(blob) < head_len or blob[:4] != _LTNT_MAGIC:
        raise FileFormatError("not an LTNT file (bad magic)")
    version, channels, frames, frame_rate = struct.unpack("<BIIf", blob[4:head_len])
    if version != _LTNT_VERSION:
        raise FileFormatError(f"unsupported LTNT version {version}")
    expected = head_len + 4 * channels * frames
    if len(blob) != expected:
        raise FileFormatError(f"LTNT payload size {len(blob)} != expected {expected}")
    flat = np.frombuffer(blob, dtype="<f4", offset=head_len)
    data = flat.reshape(frames, channels).T.copy()
    if not np.all(np.isfinite(data)):
        raise FileFormatError("LTNT payload contains non-finite values")
    return LatentSequence(data, float(frame_rate))
