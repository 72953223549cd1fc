"""Netpbm reader/writer round-trips and malformed-input diagnostics."""
import struct

import numpy as np
import pytest

from depthkit import netpbm
from depthkit.netpbm import ParseError


def test_pfm_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    depth = rng.uniform(0.2, 9.0, size=(7, 5)).astype(np.float32)
    path = tmp_path / "d.pfm"
    netpbm.write_pfm(str(path), depth)
    back, scale = netpbm.read_pfm(str(path))
    assert back.dtype == np.float32
    assert scale == 1.0
    np.testing.assert_array_equal(back, depth)


def test_pfm_rows_are_stored_bottom_up(tmp_path):
    # the first raster row in the file must be the bottom image row
    depth = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
    path = tmp_path / "d.pfm"
    netpbm.write_pfm(str(path), depth)
    raw = path.read_bytes()
    header_end = raw.index(b"-1.0\n") + len(b"-1.0\n")
    first_row = struct.unpack("<2f", raw[header_end:header_end + 8])
    assert first_row == (5.0, 6.0)


def test_pfm_negative_scale_means_little_endian(tmp_path):
    depth = np.full((2, 2), 3.25, dtype=np.float32)
    path = tmp_path / "d.pfm"
    netpbm.write_pfm(str(path), depth, scale=2.5)
    raw = path.read_bytes()
    assert b"-2.5" in raw
    _, scale = netpbm.read_pfm(str(path))
    assert scale == 2.5


def test_pfm_rejects_color_variant(tmp_path):
    path = tmp_path / "d.pfm"
    path.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
    with pytest.raises(ParseError):
        netpbm.read_pfm(str(path))


def test_pgm16_round_trip_is_big_endian(tmp_path):
    vals = np.array([[0, 1], [256, 65535]], dtype=np.uint16)
    path = tmp_path / "d.pgm"
    netpbm.write_pgm16(str(path), vals)
    raw = path.read_bytes()
    # 256 must serialize high byte first
    assert raw.endswith(b"\x00\x00\x00\x01\x01\x00\xff\xff")
    back, maxval = netpbm.read_pgm(str(path))
    assert maxval == 65535
    assert back.dtype == np.uint16
    np.testing.assert_array_equal(back, vals)


def test_pgm8_and_ppm8_round_trip(tmp_path):
    gray = np.arange(12, dtype=np.uint8).reshape(3, 4)
    rgb = np.arange(36, dtype=np.uint8).reshape(3, 4, 3)
    gpath, cpath = tmp_path / "g.pgm", tmp_path / "c.ppm"
    netpbm.write_pgm8(str(gpath), gray)
    netpbm.write_ppm8(str(cpath), rgb)
    gback, gmax = netpbm.read_pgm(str(gpath))
    cback, cmax = netpbm.read_ppm(str(cpath))
    assert (gmax, cmax) == (255, 255)
    np.testing.assert_array_equal(gback, gray)
    np.testing.assert_array_equal(cback, rgb)


def test_pgm_comments_are_skipped(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 # width then height\n1\n255\n\x07\x09")
    back, maxval = netpbm.read_pgm(str(path))
    np.testing.assert_array_equal(back, [[7, 9]])
    assert maxval == 255


def test_parse_error_reports_byte_offset(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n2 oops\n255\n\x00\x00")
    with pytest.raises(ParseError) as err:
        netpbm.read_pgm(str(path))
    assert err.value.offset == 5
    assert "oops" in str(err.value)


def test_truncated_raster_raises_with_offset(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n2 2\n255\n\x01\x02")
    with pytest.raises(ParseError) as err:
        netpbm.read_pgm(str(path))
    assert err.value.offset >= 11


def test_wrong_magic_is_rejected(tmp_path):
    path = tmp_path / "odd.pgm"
    path.write_bytes(b"P2\n2 2\n255\n1 2 3 4\n")
    with pytest.raises(ParseError):
        netpbm.read_pgm(str(path))


def test_sniff_magic(tmp_path):
    pfm, pgm = tmp_path / "a.pfm", tmp_path / "b.pgm"
    netpbm.write_pfm(str(pfm), np.ones((2, 2), dtype=np.float32))
    netpbm.write_pgm16(str(pgm), np.ones((2, 2), dtype=np.uint16))
    assert netpbm.sniff_magic(str(pfm)) == "Pf"
    assert netpbm.sniff_magic(str(pgm)) == "P5"


def test_dimension_limits(tmp_path):
    path = tmp_path / "zero.pgm"
    path.write_bytes(b"P5\n0 2\n255\n")
    with pytest.raises(ParseError):
        netpbm.read_pgm(str(path))
