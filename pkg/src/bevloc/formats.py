"""Flat binary raster formats and debug image dumps.

Two sibling formats share one header scheme:

``.smr`` — boolean rasters, magic ``SMR1``. Header: little-endian
u32 width, u32 height, u32 channels, f32 resolution, f32 origin_x,
f32 origin_y. Payload: ``channels * height * width`` bytes of 0/1,
channel-major, row-major within a channel.

``.smf`` — float32 rasters, magic ``SMF1``. Same header; payload is
little-endian f32, NaN canonicalized to 0x7FC00000 on write.

Rasters are indexed ``[channel, row, col]`` with row <-> y and
col <-> x; ``origin`` is the map-frame position of the (0, 0) cell
center, so cell (r, c) is centered at ``(origin_x + c*res,
origin_y + r*res)``.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC_BOOL = b"SMR1"
MAGIC_FLOAT = b"SMF1"
_HEADER = struct.Struct("<4sIIIfff")

_NAN_BITS = np.uint32(0x7FC00000)


class FormatError(Exception):
    """Base class for raster file format errors."""


class MagicMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


def _write(path, magic: bytes, channels: np.ndarray, resolution: float, origin) -> None:
    n, h, w = channels.shape
    header = _HEADER.pack(magic, w, h, n, resolution, origin[0], origin[1])
    with open(path, "wb") as f:
        f.write(header)
        f.write(channels.tobytes())


def _read(path, magic: bytes, dtype, itemsize: int):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than header")
    got, w, h, n, res, ox, oy = _HEADER.unpack_from(raw)
    if got != magic:
        raise MagicMismatchError(f"{path}: expected magic {magic!r}, got {got!r}")
    need = _HEADER.size + n * h * w * itemsize
    if len(raw) < need:
        raise TruncatedFileError(
            f"{path}: header declares {need} bytes, file has {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=n * h * w, offset=_HEADER.size)
    return data.reshape(n, h, w), float(res), (float(ox), float(oy))


def write_u8_raster(path, channels: np.ndarray, resolution: float, origin=(0.0, 0.0)) -> None:
    """Write an (N, H, W) byte raster as .smr (0/1 for maps, 0..255 for
    quantized BEV scores)."""
    arr = np.asarray(channels)
    if arr.ndim != 3:
        raise ValueError("channels must be (N, H, W)")
    _write(path, MAGIC_BOOL, np.ascontiguousarray(arr, dtype=np.uint8), resolution, origin)


def read_u8_raster(path):
    """Read an .smr file -> (channels (N,H,W) uint8, resolution, origin)."""
    return _read(path, MAGIC_BOOL, np.uint8, 1)


def write_bool_raster(path, channels: np.ndarray, resolution: float, origin=(0.0, 0.0)) -> None:
    """Write an (N, H, W) boolean raster as .smr."""
    write_u8_raster(path, np.asarray(channels).astype(bool), resolution, origin)


def read_bool_raster(path):
    """Read an .smr file -> (channels (N,H,W) bool, resolution, origin)."""
    data, res, origin = read_u8_raster(path)
    return data.astype(bool), res, origin


def write_float_raster(path, channels: np.ndarray, resolution: float, origin=(0.0, 0.0)) -> None:
    """Write an (N, H, W) float raster as .smf; NaNs get the canonical bit pattern."""
    arr = np.ascontiguousarray(channels, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError("channels must be (N, H, W)")
    bits = arr.view(np.uint32).copy()
    bits[np.isnan(arr)] = _NAN_BITS
    _write(path, MAGIC_FLOAT, bits.view("<f4"), resolution, origin)


def read_float_raster(path):
    """Read an .smf file -> (channels (N,H,W) float32, resolution, origin)."""
    data, res, origin = _read(path, MAGIC_FLOAT, "<f4", 4)
    return data.astype(np.float32), res, origin


def write_pgm16(path, values: np.ndarray) -> None:
    """Dump a 2D array as a max-normalized 16-bit binary PGM (row 0 on top)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("PGM dump needs a 2D array")
    peak = float(v.max())
    scale = 65535.0 / peak if peak > 0 else 0.0
    img = np.round(v * scale).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{v.shape[1]} {v.shape[0]}\n65535\n".encode())
        f.write(img.tobytes())
