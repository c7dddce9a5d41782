"""Minimal netpbm I/O: binary PBM (P4) for bitmaps, binary PGM (P5,
maxval 255) for grayscale.

Polarity: PBM's 1-is-black matches the internal 1-is-ink convention
directly. Grayscale intensities are ink-high in [0,1] internally, so PGM
bytes are written as 255*(1-v) -- ink renders dark, as a viewer expects.
"""

import numpy as np

from .errors import FormatError, ParameterError


def _tokens(data):
    """Yield whitespace-separated header tokens, skipping # comments."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i:i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < n and data[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and data[j:j + 1] not in b" \t\r\n":
                j += 1
            yield data[i:j], j
            i = j


def _read_header(data, magic, nfields):
    it = _tokens(data)
    try:
        tok, end = next(it)
        if tok != magic:
            raise FormatError(f"expected {magic.decode()} file, got {tok[:10]!r}")
        fields = []
        for _ in range(nfields):
            tok, end = next(it)
            if not tok.isdigit():
                raise FormatError(f"bad header token {tok[:10]!r}")
            fields.append(int(tok))
    except StopIteration:
        raise FormatError("truncated netpbm header") from None
    # exactly one whitespace byte separates the header from the raster
    return fields, end + 1


def read_pbm(path):
    """Read a P4 bitmap; returns a (h, w) uint8 array of 0/1, 1 = black."""
    with open(path, "rb") as fh:
        data = fh.read()
    (w, h), off = _read_header(data, b"P4", 2)
    if w < 1 or h < 1:
        raise FormatError(f"bad PBM dimensions {w}x{h}")
    row_bytes = (w + 7) // 8
    need = h * row_bytes
    raster = data[off:off + need]
    if len(raster) != need:
        raise FormatError(f"PBM raster is {len(raster)} bytes, expected {need}")
    rows = np.frombuffer(raster, np.uint8).reshape(h, row_bytes)
    bits = np.unpackbits(rows, axis=1)[:, :w]
    return bits.astype(np.uint8)


def write_pbm(bits, path):
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2 or bits.max(initial=0) > 1:
        raise ParameterError("write_pbm expects a 2-d 0/1 array")
    h, w = bits.shape
    packed = np.packbits(bits, axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode())
        fh.write(packed.tobytes())


def read_pgm(path):
    """Read a P5 image; returns (h, w) float64 ink-high intensities."""
    with open(path, "rb") as fh:
        data = fh.read()
    (w, h, maxval), off = _read_header(data, b"P5", 3)
    if w < 1 or h < 1:
        raise FormatError(f"bad PGM dimensions {w}x{h}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 PGM is supported, got {maxval}")
    need = h * w
    raster = data[off:off + need]
    if len(raster) != need:
        raise FormatError(f"PGM raster is {len(raster)} bytes, expected {need}")
    gray = np.frombuffer(raster, np.uint8).reshape(h, w)
    return (255.0 - gray) / 255.0


def write_pgm(intensities, path):
    v = np.asarray(intensities, dtype=np.float64)
    if v.ndim != 2:
        raise ParameterError("write_pgm expects a 2-d array")
    if v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
        raise ParameterError("intensities must be in [0, 1]")
    gray = np.rint(255.0 * (1.0 - v)).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(gray.tobytes())
