"""Reading and writing the netpbm-family formats used for depth and image data.

Depth maps arrive either as PFM (single-channel float32, meters) or as
16-bit binary PGM (millimeters, sample value 0 marks a missing reading).
Encoded outputs leave as 8-bit binary PGM / PPM.  All parsers report
failures as :class:`ParseError` carrying the byte offset of the problem.
"""
from __future__ import annotations

import numpy as np


class ParseError(ValueError):
    """Malformed input file.  ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


_WHITESPACE = b" \t\r\n\v\f"


class _Tokenizer:
    """Pulls whitespace-separated header tokens out of a byte buffer.

    Comments (``#`` to end of line) are skipped when ``comments`` is set;
    PFM headers do not allow them, PGM/PPM headers do.
    """

    def __init__(self, data: bytes, comments: bool):
        self.data = data
        self.pos = 0
        self.comments = comments

    def _skip_separators(self) -> None:
        while self.pos < len(self.data):
            byte = self.data[self.pos : self.pos + 1]
            if byte in (b"#",) and self.comments:
                end = self.data.find(b"\n", self.pos)
                self.pos = len(self.data) if end < 0 else end + 1
            elif byte in _WHITESPACE:
                self.pos += 1
            else:
                return

    def token(self, what: str) -> bytes:
        self._skip_separators()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos : self.pos + 1] not in _WHITESPACE:
            if self.data[self.pos : self.pos + 1] == b"#" and self.comments:
                break
            self.pos += 1
        if self.pos == start:
            raise ParseError(f"expected {what}", start)
        return self.data[start : self.pos]

    def int_token(self, what: str) -> int:
        tok = self.token(what)
        start = self.pos - len(tok)
        try:
            return int(tok)
        except ValueError:
            raise ParseError(f"{what} is not an integer: {tok!r}", start) from None

    def float_token(self, what: str) -> float:
        tok = self.token(what)
        start = self.pos - len(tok)
        try:
            return float(tok)
        except ValueError:
            raise ParseError(f"{what} is not a number: {tok!r}", start) from None

    def raster_start(self) -> int:
        """Consume the single whitespace byte that separates header from raster."""
        if self.pos >= len(self.data):
            raise ParseError("file ends before raster data", self.pos)
        if self.data[self.pos : self.pos + 1] not in _WHITESPACE:
            raise ParseError("missing whitespace before raster data", self.pos)
        self.pos += 1
        return self.pos


def read_pfm(path: str) -> tuple[np.ndarray, float]:
    """Read a grayscale PFM file.

    Returns ``(values, scale)`` where ``values`` is a float32 ``(H, W)``
    array in top-to-bottom row order (the file stores rows bottom-up) and
    ``scale`` is the absolute value of the header scale field.  A negative
    header scale marks little-endian sample data, positive big-endian.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    tok = _Tokenizer(data, comments=False)
    magic = tok.token("magic number")
    if magic == b"PF":
        raise ParseError("color PFM is not supported, expected grayscale 'Pf'", 0)
    if magic != b"Pf":
        raise ParseError(f"not a PFM file, magic {magic!r}", 0)
    width = tok.int_token("width")
    height = tok.int_token("height")
    if width <= 0 or height <= 0:
        raise ParseError(f"bad dimensions {width}x{height}", tok.pos)
    scale = tok.float_token("scale")
    if scale == 0:
        raise ParseError("scale must be nonzero", tok.pos)
    start = tok.raster_start()
    nbytes = width * height * 4
    if len(data) - start < nbytes:
        raise ParseError(
            f"raster truncated, need {nbytes} bytes, have {len(data) - start}",
            len(data),
        )
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(data, dtype=dtype, count=width * height, offset=start)
    values = values.reshape(height, width)[::-1].astype(np.float32)
    return values, abs(scale)


def write_pfm(path: str, values: np.ndarray, scale: float = 1.0) -> None:
    """Write a grayscale PFM (little-endian, rows stored bottom-up)."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"PFM data must be 2-D, got shape {arr.shape}")
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{width} {height}\n".encode("ascii"))
        fh.write(f"{-abs(scale)}\n".encode("ascii"))
        fh.write(arr[::-1].astype("<f4").tobytes())


def _read_binary_netpbm(path: str, magic_want: bytes, channels: int) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        data = fh.read()
    tok = _Tokenizer(data, comments=True)
    magic = tok.token("magic number")
    if magic != magic_want:
        raise ParseError(f"expected magic {magic_want.decode()}, got {magic!r}", 0)
    width = tok.int_token("width")
    height = tok.int_token("height")
    if width <= 0 or height <= 0:
        raise ParseError(f"bad dimensions {width}x{height}", tok.pos)
    maxval = tok.int_token("maxval")
    if not 0 < maxval < 65536:
        raise ParseError(f"maxval {maxval} out of range 1..65535", tok.pos)
    start = tok.raster_start()
    # Samples over 255 take two bytes, most significant first.
    itemsize = 2 if maxval > 255 else 1
    count = width * height * channels
    nbytes = count * itemsize
    if len(data) - start < nbytes:
        raise ParseError(
            f"raster truncated, need {nbytes} bytes, have {len(data) - start}",
            len(data),
        )
    dtype = ">u2" if itemsize == 2 else "u1"
    values = np.frombuffer(data, dtype=dtype, count=count, offset=start)
    shape = (height, width) if channels == 1 else (height, width, channels)
    values = values.reshape(shape)
    if values.max(initial=0) > maxval:
        raise ParseError(f"sample exceeds maxval {maxval}", start)
    return values.astype(np.uint16 if itemsize == 2 else np.uint8), maxval


def read_pgm(path: str) -> tuple[np.ndarray, int]:
    """Read a binary PGM (P5).  Returns ``(values, maxval)``, rows top-down."""
    return _read_binary_netpbm(path, b"P5", 1)


def read_ppm(path: str) -> tuple[np.ndarray, int]:
    """Read a binary PPM (P6).  Returns ``((H, W, 3) values, maxval)``."""
    return _read_binary_netpbm(path, b"P6", 3)


def write_pgm8(path: str, values: np.ndarray) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError(f"8-bit PGM needs a uint8 (H, W) array, got {arr.dtype} {arr.shape}")
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def write_pgm16(path: str, values: np.ndarray) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.dtype != np.uint16:
        raise ValueError(f"16-bit PGM needs a uint16 (H, W) array, got {arr.dtype} {arr.shape}")
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        fh.write(arr.astype(">u2").tobytes())


def write_ppm8(path: str, values: np.ndarray) -> None:
    arr = np.asarray(values)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"8-bit PPM needs a uint8 (H, W, 3) array, got {arr.dtype} {arr.shape}")
    height, width = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def sniff_magic(path: str) -> str:
    """Return the two-character magic of a netpbm/PFM file."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if len(magic) < 2:
        raise ParseError("file too short for a magic number", 0)
    return magic.decode("latin-1")
