"""Minimal binary PGM (P5, 8-bit) reading and writing.

Grayscale stills enter the curation pipeline in this format so the blur
scorer never needs an image-decoding dependency.
"""

import numpy as np

from .errors import SchemaError


def _read_token(buf: bytes, pos: int) -> tuple:
    # skip whitespace and '#' comments, then collect one token
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise SchemaError("truncated PGM header")
    return buf[start:pos], pos


def read_pgm(path: str) -> np.ndarray:
    """Load an 8-bit binary PGM as a (height, width) uint8 array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise SchemaError(f"not a binary PGM (magic {magic!r})")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise SchemaError(f"bad PGM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise SchemaError(f"bad PGM dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise SchemaError(f"only 8-bit PGM supported, maxval {maxval}")
    pos += 1  # single whitespace byte separates header from raster
    data = buf[pos:pos + width * height]
    if len(data) != width * height:
        raise SchemaError(
            f"raster holds {len(data)} bytes, expected {width * height}"
        )
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def write_pgm(path: str, image: np.ndarray) -> None:
    """Write a 2-D array of 8-bit intensities as binary PGM."""
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.size == 0:
        raise SchemaError(f"image must be 2-D and non-empty, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise SchemaError("intensities must fit in 8 bits")
        arr = arr.astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())
