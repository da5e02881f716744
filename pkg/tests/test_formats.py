import struct

import numpy as np
import pytest

from bevloc import formats
from bevloc.formats import MagicMismatchError, TruncatedFileError


def test_bool_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    ch = rng.uniform(size=(3, 64, 64)) > 0.5
    path = tmp_path / "r.smr"
    formats.write_bool_raster(path, ch, 0.25, (1.5, -2.0))
    back, res, origin = formats.read_bool_raster(path)
    np.testing.assert_array_equal(back, ch)
    assert res == pytest.approx(0.25)
    assert origin == (1.5, -2.0)


def test_u8_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ch = rng.integers(0, 256, size=(2, 10, 12), dtype=np.uint8)
    path = tmp_path / "r.smr"
    formats.write_u8_raster(path, ch, 0.5)
    back, _, _ = formats.read_u8_raster(path)
    np.testing.assert_array_equal(back, ch)


def test_wrong_magic(tmp_path):
    path = tmp_path / "bad.smr"
    path.write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(MagicMismatchError):
        formats.read_bool_raster(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "trunc.smr"
    header = struct.pack("<4sIIIfff", b"SMR1", 100, 100, 2, 0.5, 0.0, 0.0)
    path.write_bytes(header + b"\x01" * 10)
    with pytest.raises(TruncatedFileError):
        formats.read_bool_raster(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "tiny.smr"
    path.write_bytes(b"SMR1\x01")
    with pytest.raises(TruncatedFileError):
        formats.read_bool_raster(path)


def test_float_nan_canonical_bits(tmp_path):
    arr = np.array([[[1.5, np.nan], [-2.0, 0.0]]], dtype=np.float32)
    path = tmp_path / "h.smf"
    formats.write_float_raster(path, arr, 1.0)
    raw = path.read_bytes()
    payload = raw[struct.calcsize("<4sIIIfff"):]
    bits = np.frombuffer(payload, dtype="<u4").reshape(1, 2, 2)
    assert bits[0, 0, 1] == 0x7FC00000
    back, _, _ = formats.read_float_raster(path)
    np.testing.assert_array_equal(np.isnan(back), np.isnan(arr))
    np.testing.assert_array_equal(back[~np.isnan(arr)], arr[~np.isnan(arr)])


def test_float_magic_mismatch_vs_bool(tmp_path):
    path = tmp_path / "h.smf"
    formats.write_float_raster(path, np.zeros((1, 4, 4), dtype=np.float32), 1.0)
    with pytest.raises(MagicMismatchError):
        formats.read_bool_raster(path)


def test_pgm16(tmp_path):
    v = np.array([[0.0, 0.5], [1.0, 2.0]])
    path = tmp_path / "p.pgm"
    formats.write_pgm16(path, v)
    raw = path.read_bytes()
    header, payload = raw.split(b"65535\n", 1)
    assert header == b"P5\n2 2\n"
    img = np.frombuffer(payload, dtype=">u2").reshape(2, 2)
    # max-normalized to the 16-bit range
    assert img[1, 1] == 65535
    assert img[0, 1] == round(0.5 / 2.0 * 65535)
